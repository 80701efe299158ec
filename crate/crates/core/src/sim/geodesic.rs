use std::collections::VecDeque;

use super::labels::object_distance;
use super::pose::{headings, AgentPose};
use super::render::{object_visible, RenderConfig};
use super::scene::{Cell, SceneSpec};
use super::task::{TaskKind, TaskSpec};
use super::{CELL_SIZE, HORIZONS, INTERACTION_RANGE};
use crate::error::{Error, Result};

/// Breadth-first step counts from a set of source cells over a traversability map.
/// Sources need not be traversable themselves.
pub fn bfs_steps(scene: &SceneSpec, traversable: &[bool], sources: &[Cell]) -> Vec<Option<u32>> {
    let grid = &scene.grid;
    let mut dist = vec![None; grid.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if grid.in_bounds(s) {
            let i = grid.index(s);
            if dist[i].is_none() {
                dist[i] = Some(0);
                queue.push_back(s);
            }
        }
    }
    while let Some(c) = queue.pop_front() {
        let d = dist[grid.index(c)].unwrap_or(0);
        for (dx, dy) in [(0, 1), (1, 0), (0, -1), (-1, 0)] {
            let n = c.offset(dx, dy);
            if grid.in_bounds(n) {
                let j = grid.index(n);
                if traversable[j] && dist[j].is_none() {
                    dist[j] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
    }
    dist
}

/// Whether `Done` at `pose` would satisfy an object-goal: an instance of the
/// category is within range and at least one pixel of it is rendered.
pub fn objectnav_success(scene: &SceneSpec, pose: &AgentPose, cfg: &RenderConfig, category: usize) -> bool {
    scene.objects.iter().any(|o| {
        !o.carried
            && o.category == category
            && object_distance(pose, o.position) <= INTERACTION_RANGE
            && object_visible(scene, pose, cfg, o.id)
    })
}

/// Traversable cells from which some heading and horizon satisfies the object goal.
pub fn objectnav_success_cells(scene: &SceneSpec, cfg: &RenderConfig, category: usize) -> Vec<Cell> {
    let traversable = scene.traversable_map();
    let mut cells = Vec::new();
    for (i, &free) in traversable.iter().enumerate() {
        if !free {
            continue;
        }
        let cell = scene.grid.cell_at(i);
        let near = scene.objects.iter().any(|o| {
            !o.carried
                && o.category == category
                && object_distance(&AgentPose::new(cell, 0, 0), o.position) <= INTERACTION_RANGE
        });
        if !near {
            continue;
        }
        let ok = headings()
            .any(|h| HORIZONS.iter().any(|&v| objectnav_success(scene, &AgentPose::new(cell, h, v), cfg, category)));
        if ok {
            cells.push(cell);
        }
    }
    cells
}

/// Geodesic distance field (meters) toward the goal region of a navigation task.
#[derive(Debug, Clone)]
pub struct DistanceField {
    steps: Vec<Option<u32>>,
    width: usize,
}

impl DistanceField {
    pub fn for_task(scene: &SceneSpec, task: &TaskSpec, cfg: &RenderConfig) -> Result<Self> {
        let goals = match task.kind {
            TaskKind::ObjectNav => {
                let cat = task.goal_category.ok_or_else(|| Error::Config("object goal without category".into()))?;
                objectnav_success_cells(scene, cfg, cat)
            }
            TaskKind::PointNav => {
                let p = task.goal_position.ok_or_else(|| Error::Config("point goal without position".into()))?;
                vec![Cell::of(p)]
            }
            TaskKind::Rearrange1Phase => {
                return Err(Error::Unsupported("geodesic distance for rearrangement".into()));
            }
        };
        if goals.is_empty() {
            return Err(Error::Unreachable("no cell satisfies the goal".into()));
        }
        let traversable = scene.traversable_map();
        Ok(DistanceField { steps: bfs_steps(scene, &traversable, &goals), width: scene.grid.width })
    }

    pub fn meters(&self, cell: Cell) -> Option<f64> {
        if cell.x < 0 || cell.y < 0 || cell.x as usize >= self.width {
            return None;
        }
        let i = cell.y as usize * self.width + cell.x as usize;
        self.steps.get(i).copied().flatten().map(|s| s as f64 * CELL_SIZE)
    }
}

/// Geodesic length on the 0.25 m grid from `from` to the task's goal region.
pub fn shortest_path_length(scene: &SceneSpec, from: &AgentPose, goal: &TaskSpec, cfg: &RenderConfig) -> Result<f64> {
    DistanceField::for_task(scene, goal, cfg)?
        .meters(from.cell())
        .ok_or_else(|| Error::Unreachable(format!("no path from cell {:?}", from.cell())))
}
