//! Grid-room simulator: scenes, rendering, tasks, shortest-path oracles,
//! the expert and ground-truth probe labels.

pub mod diff;
pub mod episode;
pub mod expert;
pub mod geodesic;
pub mod labels;
pub mod pose;
pub mod render;
pub mod scene;
pub mod task;

/// Side length of a grid cell and MoveAhead distance, meters.
pub const CELL_SIZE: f64 = 0.25;
pub const ROTATION_STEP_DEG: i32 = 30;
/// Allowed camera horizons; positive looks down.
pub const HORIZONS: [i32; 3] = [-30, 0, 30];
/// Range for object-goal success and manipulation, meters (Euclidean).
pub const INTERACTION_RANGE: f64 = 1.0;
pub const POINTNAV_SUCCESS_RADIUS: f64 = 0.2;
/// Objects taller than this are never reachable.
pub const ARM_REACH_HEIGHT: f64 = 1.0;
pub const CAMERA_HEIGHT: f64 = 0.9;
pub const WALL_HEIGHT: f64 = 2.5;

pub use diff::{rearrangement_diff, DiffReport};
pub use episode::EpisodeLog;
pub use expert::expert_action;
pub use geodesic::shortest_path_length;
pub use labels::{ground_truth_labels, ProbeLabels, Reach, FREE_SPACE_CLASSES};
pub use pose::AgentPose;
pub use render::{render, render_frame, Frame, RenderConfig, RgbImage};
pub use scene::{generate_scene, Cell, ObjectInstance, OccupancyGrid, SceneSpec, SimConfig, TaskConfig};
pub use task::{Action, ActionSpace, Observation, SimState, StepInfo, StepResult, TaskKind, TaskSpec};
