use serde::{Deserialize, Serialize};

use super::pose::AgentPose;
use super::render::{render_frame, RenderConfig, Surface, ViewBuffer};
use super::scene::SceneSpec;
use super::{ARM_REACH_HEIGHT, INTERACTION_RANGE};

/// Free-space classes are 0..=9 steps plus a final ">= 10" class.
pub const FREE_SPACE_CLASSES: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reach {
    Absent = 0,
    VisibleNotReachable = 1,
    Reachable = 2,
}

/// Ground-truth primitives for one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeLabels {
    /// Category visible anywhere in the frame.
    pub presence: Vec<u8>,
    /// `localization[cell * K + category]`, cells row-major over a 3x3 image grid.
    pub localization: Vec<u8>,
    pub free_space: u8,
    pub reachability: Vec<Reach>,
}

impl ProbeLabels {
    pub fn category_count(&self) -> usize {
        self.presence.len()
    }
}

/// Number of consecutive MoveAhead steps that succeed from `pose`.
pub fn free_steps(scene: &SceneSpec, pose: &AgentPose, cap: usize) -> usize {
    let (dx, dy) = pose.move_step();
    let mut cell = pose.cell();
    let mut n = 0;
    while n < cap {
        cell = cell.offset(dx, dy);
        if !scene.is_traversable(cell) {
            break;
        }
        n += 1;
    }
    n
}

/// Euclidean distance between the agent and an object's center.
pub fn object_distance(pose: &AgentPose, position: [f64; 2]) -> f64 {
    let dx = pose.position[0] - position[0];
    let dy = pose.position[1] - position[1];
    (dx * dx + dy * dy).sqrt()
}

pub fn ground_truth_labels(scene: &SceneSpec, pose: &AgentPose, cfg: &RenderConfig) -> ProbeLabels {
    let frame = render_frame(scene, pose, cfg);
    labels_from_view(scene, pose, &frame.view)
}

/// Labels derived from an already-rendered ground-truth buffer.
pub fn labels_from_view(scene: &SceneSpec, pose: &AgentPose, view: &ViewBuffer) -> ProbeLabels {
    let k = scene.category_count;
    let size = view.size;
    let mut presence = vec![0u8; k];
    let mut localization = vec![0u8; 9 * k];
    let mut visible = vec![false; scene.objects.len()];
    for (i, s) in view.surfaces.iter().enumerate() {
        if let Surface::Object(id) = *s {
            let cat = scene.objects[id as usize].category;
            let (row, col) = (i / size, i % size);
            let cell = (row * 3 / size) * 3 + col * 3 / size;
            presence[cat] = 1;
            localization[cell * k + cat] = 1;
            visible[id as usize] = true;
        }
    }
    let mut reachability = vec![Reach::Absent; k];
    for o in scene.objects.iter().filter(|o| visible[o.id as usize]) {
        let reachable = object_distance(pose, o.position) <= INTERACTION_RANGE && o.height <= ARM_REACH_HEIGHT;
        let r = if reachable { Reach::Reachable } else { Reach::VisibleNotReachable };
        if r as u8 > reachability[o.category] as u8 {
            reachability[o.category] = r;
        }
    }
    let free = free_steps(scene, pose, FREE_SPACE_CLASSES - 1);
    ProbeLabels { presence, localization, free_space: free as u8, reachability }
}
