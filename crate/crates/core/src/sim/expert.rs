//! Shortest-plan expert used for imitation targets and oracle evaluation.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::geodesic::objectnav_success;
use super::labels::object_distance;
use super::pose::AgentPose;
use super::render::object_visible;
use super::scene::Cell;
use super::task::{Action, SimState, TaskKind};
use super::{HORIZONS, INTERACTION_RANGE};
use crate::error::{Error, Result};

/// Plan cost: translations first, then rotations and camera moves.
pub type Cost = (u32, u32);

/// Result of a plan search from the current pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plan {
    pub cost: Cost,
    /// `None` when the current pose already satisfies the goal.
    pub first: Option<Action>,
}

const NAV: [Action; 5] = [Action::MoveAhead, Action::RotateRight, Action::RotateLeft, Action::LookUp, Action::LookDown];

fn pose_key(width: usize, pose: &AgentPose) -> usize {
    let c = pose.cell();
    ((c.y as usize * width + c.x as usize) * 12 + pose.heading_index()) * 3 + pose.horizon_index()
}

fn successor(state: &SimState, pose: &AgentPose, action: Action) -> Option<(AgentPose, Cost)> {
    match action {
        Action::MoveAhead => {
            let next = pose.front_cell();
            state.scene.is_traversable(next).then(|| (AgentPose { position: next.center(), ..*pose }, (1, 0)))
        }
        Action::RotateRight => Some((pose.rotated(1), (0, 1))),
        Action::RotateLeft => Some((pose.rotated(-1), (0, 1))),
        Action::LookUp | Action::LookDown => {
            let h = pose.horizon + if action == Action::LookUp { -30 } else { 30 };
            HORIZONS.contains(&h).then_some((AgentPose { horizon: h, ..*pose }, (0, 1)))
        }
        _ => None,
    }
}

/// Dijkstra over (cell, heading, horizon) with lexicographic cost and the
/// lowest action index as the final tie-break. `goal` is tested lazily on pop.
pub fn plan_to(state: &SimState, mut goal: impl FnMut(&AgentPose) -> bool) -> Option<Plan> {
    let width = state.scene.grid.width;
    let n = state.scene.grid.len() * 36;
    let moves: Vec<(usize, Action)> = NAV.iter().filter_map(|&a| state.actions.index_of(a).map(|i| (i, a))).collect();
    let mut best: Vec<Option<(u32, u32, usize)>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    let start = state.pose;
    // First-action slot usize::MAX marks the start pose.
    best[pose_key(width, &start)] = Some((0, 0, usize::MAX));
    heap.push(Reverse((0u32, 0u32, usize::MAX, pose_key(width, &start), start.heading, start.horizon)));
    let mut poses: Vec<Option<AgentPose>> = vec![None; n];
    poses[pose_key(width, &start)] = Some(start);
    let mut closed = vec![false; n];
    while let Some(Reverse((m, t, first, key, _, _))) = heap.pop() {
        if closed[key] {
            continue;
        }
        closed[key] = true;
        let pose = poses[key].expect("queued poses are recorded");
        if goal(&pose) {
            let first = (first != usize::MAX).then(|| state.actions.get(first).expect("index from action space"));
            return Some(Plan { cost: (m, t), first });
        }
        for &(index, action) in &moves {
            let Some((next, (dm, dt))) = successor(state, &pose, action) else {
                continue;
            };
            let k = pose_key(width, &next);
            if closed[k] {
                continue;
            }
            let f = if first == usize::MAX { index } else { first };
            let cand = (m + dm, t + dt, f);
            if best[k].is_none_or(|b| cand < b) {
                best[k] = Some(cand);
                poses[k] = Some(next);
                heap.push(Reverse((cand.0, cand.1, cand.2, k, next.heading, next.horizon)));
            }
        }
    }
    None
}

/// Next action of a minimal-cost plan toward the task goal.
pub fn expert_action(state: &SimState) -> Result<Action> {
    if state.done {
        return Err(Error::EpisodeTerminated);
    }
    match state.task.kind {
        TaskKind::ObjectNav => {
            let cat = state.task.goal_category.ok_or_else(|| Error::Config("missing goal category".into()))?;
            let plan = plan_to(state, |p| objectnav_success(&state.scene, p, &state.render_cfg, cat))
                .ok_or_else(|| Error::Unreachable("no pose sees the goal".into()))?;
            Ok(plan.first.unwrap_or(Action::Done))
        }
        TaskKind::PointNav => {
            let goal = state.task.goal_position.ok_or_else(|| Error::Config("missing goal position".into()))?;
            let target = Cell::of(goal);
            let plan = plan_to(state, |p| p.cell() == target)
                .ok_or_else(|| Error::Unreachable("goal cell unreachable".into()))?;
            Ok(plan.first.unwrap_or(Action::Done))
        }
        TaskKind::Rearrange1Phase => rearrange_expert(state),
    }
}

fn rearrange_expert(state: &SimState) -> Result<Action> {
    let goal = state.goal_scene().ok_or_else(|| Error::Config("missing goal scene".into()))?;
    if let Some(id) = state.held {
        let target = goal.objects[id as usize].cell();
        let plan = plan_to(state, |p| p.front_cell() == target && state.scene.is_traversable(target))
            .ok_or_else(|| Error::Unreachable(format!("cannot reach goal cell of object {id}")))?;
        return Ok(plan.first.unwrap_or(Action::Place));
    }
    let diff = state.diff()?;
    if diff.is_empty() {
        return Ok(Action::Done);
    }
    let mut best: Option<(Cost, u32, Plan, Action)> = None;
    for d in &diff.objects {
        let o = &state.scene.objects[d.id as usize];
        let interaction = if d.state_differs {
            if goal.is_open(d.id) {
                Action::Open(o.category)
            } else {
                Action::Close(o.category)
            }
        } else {
            Action::PickUp(o.category)
        };
        let targeted = |p: &AgentPose| interaction_target_at(state, p, o.category) == Some(d.id);
        if let Some(plan) = plan_to(state, targeted) {
            if best.as_ref().is_none_or(|b| (plan.cost, d.id) < (b.0, b.1)) {
                best = Some((plan.cost, d.id, plan, interaction));
            }
        }
    }
    let (_, _, plan, interaction) =
        best.ok_or_else(|| Error::Unreachable("no misplaced object can be targeted".into()))?;
    Ok(plan.first.unwrap_or(interaction))
}

/// The object an interaction on `category` would target from `pose`.
fn interaction_target_at(state: &SimState, pose: &AgentPose, category: usize) -> Option<u32> {
    let mut best: Option<(f64, u32)> = None;
    for o in state.scene.objects.iter().filter(|o| !o.carried && o.category == category) {
        let d = object_distance(pose, o.position);
        if d <= INTERACTION_RANGE
            && best.is_none_or(|(bd, bid)| (d, o.id) < (bd, bid))
            && object_visible(&state.scene, pose, &state.render_cfg, o.id)
        {
            best = Some((d, o.id));
        }
    }
    best.map(|(_, id)| id)
}
