//! Task definitions, episode construction and the stepping contract.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::diff::{rearrangement_diff, DiffReport};
use super::expert::expert_action;
use super::geodesic::{bfs_steps, objectnav_success, DistanceField};
use super::labels::object_distance;
use super::pose::AgentPose;
use super::render::{object_visible, render_frame, Frame, RenderConfig};
use super::scene::{generate_scene, is_connected, is_openable, Cell, SceneSpec, SimConfig, TaskConfig};
use super::{CELL_SIZE, HORIZONS, INTERACTION_RANGE, POINTNAV_SUCCESS_RADIUS};
use crate::error::{Error, Result};
use crate::rng::{Rng, SeedStream};

pub const SUCCESS_REWARD: f64 = 10.0;
pub const STEP_PENALTY: f64 = 0.01;

/// How many scene/task draws `make_episode` attempts before giving up.
const MAX_ATTEMPTS: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    ObjectNav,
    PointNav,
    Rearrange1Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    RotateRight,
    RotateLeft,
    LookUp,
    LookDown,
    Done,
    PickUp(usize),
    Place,
    Open(usize),
    Close(usize),
}

/// Ordered discrete action set of a task; policies emit indices into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    actions: Vec<Action>,
}

impl ActionSpace {
    pub fn object_nav() -> Self {
        use Action::*;
        ActionSpace { actions: vec![MoveAhead, RotateRight, RotateLeft, LookUp, LookDown, Done] }
    }

    pub fn point_nav() -> Self {
        use Action::*;
        ActionSpace { actions: vec![MoveAhead, RotateRight, RotateLeft, Done] }
    }

    /// Navigation, PickUp per pickupable category, Place, Open/Close per openable category, Done.
    pub fn rearrange(category_count: usize) -> Self {
        use Action::*;
        let mut actions = vec![MoveAhead, RotateRight, RotateLeft, LookUp, LookDown];
        actions.extend((0..category_count).filter(|&c| !is_openable(c)).map(PickUp));
        actions.push(Place);
        actions.extend((0..category_count).filter(|&c| is_openable(c)).map(Open));
        actions.extend((0..category_count).filter(|&c| is_openable(c)).map(Close));
        actions.push(Done);
        ActionSpace { actions }
    }

    pub fn for_task(kind: TaskKind, category_count: usize) -> Self {
        match kind {
            TaskKind::ObjectNav => Self::object_nav(),
            TaskKind::PointNav => Self::point_nav(),
            TaskKind::Rearrange1Phase => Self::rearrange(category_count),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn get(&self, index: usize) -> Result<Action> {
        self.actions.get(index).copied().ok_or(Error::OutOfRange { index, limit: self.actions.len() })
    }

    pub fn index_of(&self, action: Action) -> Option<usize> {
        self.actions.iter().position(|&a| a == action)
    }
}

/// Goal and episode parameters. Only the fields of the task's kind are set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub start: AgentPose,
    pub max_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_category: Option<usize>,
    /// Goal relative to the start pose: (distance m, angle rad clockwise from heading).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_polar: Option<[f64; 2]>,
    /// Absolute goal position in meters, the same goal as `goal_polar`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_position: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_scene: Option<SceneSpec>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let (c, p, s) = (self.goal_category.is_some(), self.goal_polar.is_some(), self.goal_scene.is_some());
        let ok = match self.kind {
            TaskKind::ObjectNav => c && !p && !s && self.goal_position.is_none(),
            TaskKind::PointNav => !c && p && !s && self.goal_position.is_some(),
            TaskKind::Rearrange1Phase => !c && !p && s && self.goal_position.is_none(),
        };
        if !ok {
            return Err(Error::Config(format!("goal fields do not match task kind {:?}", self.kind)));
        }
        self.start.validate()
    }
}

/// Goal distance field computed during generation, reused by `SimState::new`.
/// Not serialized and ignored by equality; rebuilt when absent.
#[derive(Debug, Clone, Default)]
pub struct FieldCache(Option<Arc<DistanceField>>);

impl PartialEq for FieldCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// A fully specified episode: the starting world plus the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub seed: u64,
    pub config: SimConfig,
    pub scene: SceneSpec,
    pub task: TaskSpec,
    #[serde(skip)]
    pub field: FieldCache,
}

/// Relative polar coordinates of `goal` from `pose`: distance and clockwise angle
/// from the heading in (-pi, pi].
pub fn polar_to(pose: &AgentPose, goal: [f64; 2]) -> [f64; 2] {
    let dx = goal[0] - pose.position[0];
    let dy = goal[1] - pose.position[1];
    let dist = (dx * dx + dy * dy).sqrt();
    if dist == 0.0 {
        return [0.0, 0.0];
    }
    let bearing = dx.atan2(dy);
    let mut angle = bearing - (pose.heading as f64).to_radians();
    while angle <= -std::f64::consts::PI {
        angle += std::f64::consts::TAU;
    }
    while angle > std::f64::consts::PI {
        angle -= std::f64::consts::TAU;
    }
    [dist, angle]
}

fn random_pose(rng: &mut Rng, cell: Cell) -> AgentPose {
    AgentPose::new(cell, rng.gen_range(0..12) * 30, 0)
}

fn free_cells(scene: &SceneSpec) -> Vec<Cell> {
    scene.traversable_map().iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| scene.grid.cell_at(i)).collect()
}

/// Build an episode for `config` from `seed`. The goal is verified achievable;
/// rearrangement episodes are additionally verified by running the expert.
pub fn make_episode(seed: u64, config: &SimConfig) -> Result<Episode> {
    config.validate()?;
    let stream = SeedStream::new(seed).child("episode");
    let mut last_err = Error::Unreachable("no attempt made".into());
    for attempt in 0..MAX_ATTEMPTS {
        // The first attempt uses the episode seed itself for the scene.
        let scene_seed = if attempt == 0 { seed } else { stream.child("scene").index(attempt).seed() };
        let mut rng = stream.index(attempt).rng();
        let scene = match generate_scene(scene_seed, config) {
            Ok(s) => s,
            Err(e) => {
                last_err = e;
                continue;
            }
        };
        let made = match &config.task {
            TaskConfig::ObjectNav { goal_categories } => {
                object_nav_task(&scene, config, goal_categories.as_deref(), &mut rng)
                    .map(|(s, t, f)| (s, t, FieldCache(Some(Arc::new(f)))))
            }
            TaskConfig::PointNav { min_goal_cells } => {
                point_nav_task(&scene, config, *min_goal_cells, &mut rng).map(|(s, t)| (s, t, FieldCache::default()))
            }
            TaskConfig::Rearrange1Phase { .. } => {
                rearrange_task(&scene, config, &mut rng).map(|(s, t)| (s, t, FieldCache::default()))
            }
        };
        match made {
            Ok((scene, task, field)) => {
                let episode = Episode { seed, config: config.clone(), scene, task, field };
                if let TaskConfig::Rearrange1Phase { .. } = config.task {
                    if let Err(e) = verify_with_expert(&episode) {
                        last_err = e;
                        continue;
                    }
                }
                return Ok(episode);
            }
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

fn object_nav_task(
    scene: &SceneSpec,
    config: &SimConfig,
    allowed: Option<&[usize]>,
    rng: &mut Rng,
) -> Result<(SceneSpec, TaskSpec, DistanceField)> {
    let mut present: Vec<usize> =
        scene.objects.iter().map(|o| o.category).filter(|c| allowed.is_none_or(|a| a.contains(c))).collect();
    present.sort_unstable();
    present.dedup();
    let &goal = present.choose(rng).ok_or_else(|| Error::Unreachable("no allowed goal category in scene".into()))?;
    let mut task = TaskSpec {
        kind: TaskKind::ObjectNav,
        start: AgentPose::new(Cell::new(0, 0), 0, 0),
        max_steps: config.max_steps,
        goal_category: Some(goal),
        goal_polar: None,
        goal_position: None,
        goal_scene: None,
    };
    let field = DistanceField::for_task(scene, &task, &RenderConfig::from(config))?;
    let starts: Vec<Cell> =
        free_cells(scene).into_iter().filter(|&c| field.meters(c).is_some_and(|d| d > 0.0)).collect();
    let &cell = starts.choose(rng).ok_or_else(|| Error::Unreachable("no start cell outside the goal region".into()))?;
    task.start = random_pose(rng, cell);
    Ok((scene.clone(), task, field))
}

fn point_nav_task(
    scene: &SceneSpec,
    config: &SimConfig,
    min_cells: usize,
    rng: &mut Rng,
) -> Result<(SceneSpec, TaskSpec)> {
    let cells = free_cells(scene);
    let &start_cell = cells.choose(rng).ok_or_else(|| Error::Unreachable("no free cell".into()))?;
    let steps = bfs_steps(scene, &scene.traversable_map(), &[start_cell]);
    let goals: Vec<Cell> = cells
        .iter()
        .copied()
        .filter(|&c| steps[scene.grid.index(c)].is_some_and(|s| s as usize >= min_cells.max(1)))
        .collect();
    let &goal = goals.choose(rng).ok_or_else(|| Error::Unreachable("no point goal far enough from start".into()))?;
    let start = random_pose(rng, start_cell);
    let position = goal.center();
    let task = TaskSpec {
        kind: TaskKind::PointNav,
        start,
        max_steps: config.max_steps,
        goal_category: None,
        goal_polar: Some(polar_to(&start, position)),
        goal_position: Some(position),
        goal_scene: None,
    };
    Ok((scene.clone(), task))
}

/// Perturb the generated (goal) scene into a start scene with `misplaced` differences.
fn rearrange_task(goal: &SceneSpec, config: &SimConfig, rng: &mut Rng) -> Result<(SceneSpec, TaskSpec)> {
    let TaskConfig::Rearrange1Phase { misplaced, allow_moves, move_radius, start_in_view } = config.task else {
        return Err(Error::Config("not a rearrangement config".into()));
    };
    let mut start = goal.clone();
    let mut ids: Vec<u32> = goal.objects.iter().map(|o| o.id).collect();
    ids.shuffle(rng);
    let goal_cells: Vec<Cell> = goal.objects.iter().map(|o| o.cell()).collect();
    let mut changed = Vec::new();
    for id in ids {
        if changed.len() == misplaced {
            break;
        }
        let category = goal.objects[id as usize].category;
        if is_openable(category) {
            let flag = start.openables.entry(id).or_insert(false);
            *flag = !*flag;
            changed.push(id);
            continue;
        }
        if !allow_moves {
            continue;
        }
        let from = goal.objects[id as usize].cell();
        let mut options: Vec<Cell> = free_cells(&start)
            .into_iter()
            .filter(|&c| {
                let (dx, dy) = (c.x - from.x, c.y - from.y);
                let far = ((dx * dx + dy * dy) as f64).sqrt() * CELL_SIZE > 0.3;
                far && dx.unsigned_abs().max(dy.unsigned_abs()) as usize <= move_radius && !goal_cells.contains(&c)
            })
            .collect();
        options.shuffle(rng);
        for to in options {
            let saved = start.objects[id as usize].position;
            start.objects[id as usize].position = to.center();
            if scene_is_usable(&start) {
                changed.push(id);
                break;
            }
            start.objects[id as usize].position = saved;
        }
    }
    if changed.len() < misplaced {
        return Err(Error::Unreachable(format!("could only misplace {} of {misplaced} objects", changed.len())));
    }
    let render_cfg = RenderConfig::from(config);
    let cells = free_cells(&start);
    let start_pose = if start_in_view {
        let mut poses = Vec::new();
        for &c in &cells {
            for h in (0..12).map(|i| i * 30) {
                let pose = AgentPose::new(c, h, 0);
                if changed.iter().all(|&id| object_visible(&start, &pose, &render_cfg, id)) {
                    poses.push(pose);
                }
            }
        }
        *poses.choose(rng).ok_or_else(|| Error::Unreachable("no pose sees every misplaced object".into()))?
    } else {
        let &cell = cells.choose(rng).ok_or_else(|| Error::Unreachable("no free cell".into()))?;
        random_pose(rng, cell)
    };
    let task = TaskSpec {
        kind: TaskKind::Rearrange1Phase,
        start: start_pose,
        max_steps: config.max_steps,
        goal_category: None,
        goal_polar: None,
        goal_position: None,
        goal_scene: Some(goal.clone()),
    };
    Ok((start, task))
}

/// Connected free space and a free neighbour next to every object.
fn scene_is_usable(scene: &SceneSpec) -> bool {
    let map = scene.traversable_map();
    if !is_connected(&scene.grid, &map) {
        return false;
    }
    scene.objects.iter().all(|o| {
        [(0, 1), (1, 0), (0, -1), (-1, 0)].iter().any(|&(dx, dy)| {
            let n = o.cell().offset(dx, dy);
            scene.grid.in_bounds(n) && map[scene.grid.index(n)]
        })
    })
}

fn verify_with_expert(episode: &Episode) -> Result<()> {
    let mut state = SimState::new(episode)?;
    while !state.done {
        let a = expert_action(&state)?;
        state.apply(a)?;
    }
    if state.success {
        Ok(())
    } else {
        Err(Error::Unreachable("expert could not solve the episode within max_steps".into()))
    }
}

/// What the agent is told about its goal at each step.
#[derive(Debug, Clone, PartialEq)]
pub enum GoalObservation {
    Category(usize),
    /// Distance and clockwise angle to the goal from the current pose.
    Polar([f64; 2]),
    /// The "as it should be" view of the goal scene from the current pose.
    Scene(Box<Frame>),
}

/// Per-step agent input.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame: Frame,
    pub goal: GoalObservation,
    /// Index of the previous action, `None` at episode start.
    pub prev_action: Option<usize>,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub collision: bool,
    /// The action had no valid target or was outside its bounds.
    pub action_failed: bool,
    pub success: bool,
    /// Geodesic distance to goal after the step (navigation tasks).
    pub geodesic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Mutable episode state. One instance per worker; not shared.
#[derive(Debug, Clone)]
pub struct SimState {
    pub scene: SceneSpec,
    pub task: TaskSpec,
    pub pose: AgentPose,
    pub held: Option<u32>,
    pub steps: usize,
    pub done: bool,
    pub success: bool,
    /// Translation distance travelled, meters.
    pub path_length: f64,
    pub render_cfg: RenderConfig,
    pub actions: ActionSpace,
    pub initial_geodesic: Option<f64>,
    pub start_diff: Option<DiffReport>,
    field: Option<DistanceField>,
    potential: f64,
    prev_action: Option<usize>,
}

impl SimState {
    pub fn new(episode: &Episode) -> Result<Self> {
        episode.task.validate()?;
        let render_cfg = RenderConfig::from(&episode.config);
        let task = &episode.task;
        let scene = episode.scene.clone();
        let actions = ActionSpace::for_task(task.kind, scene.category_count);
        let (field, start_diff) = match task.kind {
            TaskKind::Rearrange1Phase => {
                let goal = task.goal_scene.as_ref().expect("validated");
                (None, Some(rearrangement_diff(&scene, goal)?))
            }
            _ => {
                let field = match &episode.field.0 {
                    Some(f) => DistanceField::clone(f),
                    None => DistanceField::for_task(&scene, task, &render_cfg)?,
                };
                (Some(field), None)
            }
        };
        let initial_geodesic = match &field {
            Some(f) => {
                Some(f.meters(task.start.cell()).ok_or_else(|| Error::Unreachable("start cannot reach goal".into()))?)
            }
            None => None,
        };
        let potential = initial_geodesic.unwrap_or_else(|| start_diff.as_ref().map_or(0.0, |d| d.energy()));
        Ok(SimState {
            scene,
            task: task.clone(),
            pose: task.start,
            held: None,
            steps: 0,
            done: false,
            success: false,
            path_length: 0.0,
            render_cfg,
            actions,
            initial_geodesic,
            start_diff,
            field,
            potential,
            prev_action: None,
        })
    }

    /// Geodesic distance from the current cell to the navigation goal.
    pub fn geodesic(&self) -> Option<f64> {
        self.field.as_ref().and_then(|f| f.meters(self.pose.cell()))
    }

    pub fn goal_scene(&self) -> Option<&SceneSpec> {
        self.task.goal_scene.as_ref()
    }

    pub fn diff(&self) -> Result<DiffReport> {
        let goal = self.goal_scene().ok_or_else(|| Error::Unsupported("diff outside rearrangement".into()))?;
        rearrangement_diff(&self.scene, goal)
    }

    /// Whether Done at the current pose would count as success.
    pub fn goal_satisfied(&self) -> bool {
        match self.task.kind {
            TaskKind::ObjectNav => objectnav_success(
                &self.scene,
                &self.pose,
                &self.render_cfg,
                self.task.goal_category.unwrap_or(usize::MAX),
            ),
            TaskKind::PointNav => {
                let g = self.task.goal_position.unwrap_or([f64::NAN; 2]);
                object_distance(&self.pose, g) <= POINTNAV_SUCCESS_RADIUS
            }
            TaskKind::Rearrange1Phase => self.held.is_none() && self.diff().is_ok_and(|d| d.is_empty()),
        }
    }

    pub fn observe(&self) -> Observation {
        let frame = render_frame(&self.scene, &self.pose, &self.render_cfg);
        let goal = match self.task.kind {
            TaskKind::ObjectNav => GoalObservation::Category(self.task.goal_category.unwrap_or(0)),
            TaskKind::PointNav => {
                GoalObservation::Polar(polar_to(&self.pose, self.task.goal_position.unwrap_or([0.0; 2])))
            }
            TaskKind::Rearrange1Phase => {
                let goal = self.goal_scene().expect("validated");
                GoalObservation::Scene(Box::new(render_frame(goal, &self.pose, &self.render_cfg)))
            }
        };
        Observation { frame, goal, prev_action: self.prev_action, step: self.steps }
    }

    /// The visible object of `category` within range that an interaction would
    /// target: nearest first, then lowest id.
    pub fn interaction_target(&self, category: usize) -> Option<u32> {
        let mut best: Option<(f64, u32)> = None;
        for o in self.scene.objects.iter().filter(|o| !o.carried && o.category == category) {
            let d = object_distance(&self.pose, o.position);
            if d <= INTERACTION_RANGE
                && object_visible(&self.scene, &self.pose, &self.render_cfg, o.id)
                && best.is_none_or(|(bd, bid)| (d, o.id) < (bd, bid))
            {
                best = Some((d, o.id));
            }
        }
        best.map(|(_, id)| id)
    }

    fn potential_now(&self) -> f64 {
        match self.task.kind {
            TaskKind::Rearrange1Phase => self.diff().map_or(0.0, |d| d.energy()),
            _ => self.geodesic().unwrap_or(self.potential),
        }
    }

    /// Advance the state without rendering an observation.
    pub fn apply(&mut self, action: Action) -> Result<(f64, StepInfo)> {
        if self.done {
            return Err(Error::EpisodeTerminated);
        }
        let index = self
            .actions
            .index_of(action)
            .ok_or_else(|| Error::InvalidAction(format!("{action:?} not in action space")))?;
        let mut collision = false;
        let mut failed = false;
        let mut success = false;
        match action {
            Action::MoveAhead => {
                let next = self.pose.front_cell();
                if self.scene.is_traversable(next) {
                    self.pose.position = next.center();
                    self.path_length += CELL_SIZE;
                } else {
                    collision = true;
                }
            }
            Action::RotateRight => self.pose = self.pose.rotated(1),
            Action::RotateLeft => self.pose = self.pose.rotated(-1),
            Action::LookUp | Action::LookDown => {
                let delta = if action == Action::LookUp { -30 } else { 30 };
                let h = self.pose.horizon + delta;
                if HORIZONS.contains(&h) {
                    self.pose.horizon = h;
                } else {
                    failed = true;
                }
            }
            Action::Done => {
                success = self.goal_satisfied();
                self.done = true;
            }
            Action::PickUp(cat) => match (self.held, self.interaction_target(cat)) {
                (None, Some(id)) => {
                    self.scene.objects[id as usize].carried = true;
                    self.held = Some(id);
                }
                _ => failed = true,
            },
            Action::Place => {
                let target = self.pose.front_cell();
                match self.held {
                    Some(id) if self.scene.is_traversable(target) => {
                        let o = &mut self.scene.objects[id as usize];
                        o.position = target.center();
                        o.carried = false;
                        self.held = None;
                    }
                    _ => failed = true,
                }
            }
            Action::Open(cat) | Action::Close(cat) => {
                let want_open = matches!(action, Action::Open(_));
                match self.interaction_target(cat) {
                    Some(id) if self.scene.is_open(id) != want_open => {
                        self.scene.openables.insert(id, want_open);
                    }
                    _ => failed = true,
                }
            }
        }
        self.steps += 1;
        self.prev_action = Some(index);
        if self.steps >= self.task.max_steps {
            self.done = true;
        }
        self.success = success;
        let potential = self.potential_now();
        let mut reward = -STEP_PENALTY + (self.potential - potential);
        self.potential = potential;
        if success {
            reward += SUCCESS_REWARD;
        }
        let info = StepInfo { collision, action_failed: failed, success, geodesic: self.geodesic() };
        Ok((reward, info))
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        let (reward, info) = self.apply(action)?;
        Ok(StepResult { observation: self.observe(), reward, done: self.done, info })
    }

    pub fn step_index(&mut self, index: usize) -> Result<StepResult> {
        let a = self.actions.get(index)?;
        self.step(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{ObjectInstance, OccupancyGrid};
    use std::collections::BTreeMap;

    pub(crate) fn nav_episode(objects: Vec<ObjectInstance>, start: AgentPose, goal: usize) -> Episode {
        let scene = SceneSpec {
            seed: 0,
            grid: OccupancyGrid::open(7, 9),
            objects,
            openables: BTreeMap::new(),
            category_count: 4,
        };
        let config = SimConfig { grid_size: [7, 9], ..SimConfig::object_nav(7, 1, 4, 100) };
        let task = TaskSpec {
            kind: TaskKind::ObjectNav,
            start,
            max_steps: 100,
            goal_category: Some(goal),
            goal_polar: None,
            goal_position: None,
            goal_scene: None,
        };
        Episode { seed: 0, config, scene, task, field: Default::default() }
    }

    fn obj(id: u32, category: usize, cell: Cell) -> ObjectInstance {
        ObjectInstance { id, category, position: cell.center(), height: 0.6, visible_radius: 0.1, carried: false }
    }

    #[test]
    fn blocked_move_is_a_collision() {
        let ep = nav_episode(vec![obj(0, 1, Cell::new(0, 0))], AgentPose::new(Cell::new(3, 8), 0, 0), 1);
        let mut s = SimState::new(&ep).unwrap();
        let (_, info) = s.apply(Action::MoveAhead).unwrap();
        assert!(info.collision);
        assert_eq!(s.pose, ep.task.start);
        assert_eq!(s.path_length, 0.0);
    }

    #[test]
    fn done_near_visible_goal_succeeds() {
        // Goal object 0.5 m straight ahead.
        let ep = nav_episode(vec![obj(0, 1, Cell::new(3, 3))], AgentPose::new(Cell::new(3, 1), 0, 0), 1);
        let mut s = SimState::new(&ep).unwrap();
        let r = s.step(Action::Done).unwrap();
        assert!(r.done && r.info.success);
        assert!((r.reward - (SUCCESS_REWARD - STEP_PENALTY)).abs() < 1e-12);
        assert!(matches!(s.apply(Action::MoveAhead), Err(Error::EpisodeTerminated)));
    }

    #[test]
    fn done_far_from_goal_fails_and_terminates() {
        // Seven cells ahead is 1.75 m.
        let ep = nav_episode(vec![obj(0, 1, Cell::new(3, 8))], AgentPose::new(Cell::new(3, 1), 0, 0), 1);
        let dist = object_distance(&ep.task.start, ep.scene.objects[0].position);
        assert!((dist - 1.75).abs() < 1e-12);
        let mut s = SimState::new(&ep).unwrap();
        assert!(object_visible(&s.scene, &s.pose, &s.render_cfg, 0));
        let (_, info) = s.apply(Action::Done).unwrap();
        assert!(!info.success && s.done);
    }

    #[test]
    fn look_is_clamped() {
        let ep = nav_episode(vec![obj(0, 1, Cell::new(0, 0))], AgentPose::new(Cell::new(3, 3), 0, 0), 1);
        let mut s = SimState::new(&ep).unwrap();
        s.apply(Action::LookUp).unwrap();
        assert_eq!(s.pose.horizon, -30);
        let (_, info) = s.apply(Action::LookUp).unwrap();
        assert!(info.action_failed);
        assert_eq!(s.pose.horizon, -30);
    }

    #[test]
    fn max_steps_terminates() {
        let mut ep = nav_episode(vec![obj(0, 1, Cell::new(0, 0))], AgentPose::new(Cell::new(3, 3), 0, 0), 1);
        ep.task.max_steps = 3;
        let mut s = SimState::new(&ep).unwrap();
        for _ in 0..3 {
            s.apply(Action::RotateLeft).unwrap();
        }
        assert!(s.done && !s.success);
    }

    #[test]
    fn polar_angles_are_clockwise() {
        let pose = AgentPose::new(Cell::new(2, 2), 0, 0);
        let right = polar_to(&pose, Cell::new(4, 2).center());
        assert!((right[0] - 0.5).abs() < 1e-12);
        assert!((right[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let behind = polar_to(&pose.rotated(3), Cell::new(2, 0).center());
        assert!((behind[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn action_space_sizes() {
        assert_eq!(ActionSpace::object_nav().len(), 6);
        assert_eq!(ActionSpace::point_nav().len(), 4);
        // 4 categories: pickupable 0,1,3; openable 2.
        let r = ActionSpace::rearrange(4);
        assert_eq!(r.len(), 5 + 3 + 1 + 1 + 1 + 1);
        assert_eq!(r.get(r.len() - 1).unwrap(), Action::Done);
    }

    #[test]
    fn episodes_are_reproducible_for_each_kind() {
        let mut cfgs = vec![SimConfig::object_nav(5, 2, 2, 60)];
        let mut p = SimConfig::object_nav(7, 3, 6, 60);
        p.task = TaskConfig::PointNav { min_goal_cells: 2 };
        cfgs.push(p);
        let mut r = SimConfig::object_nav(6, 3, 6, 120);
        r.task = TaskConfig::Rearrange1Phase { misplaced: 1, allow_moves: true, move_radius: 3, start_in_view: false };
        cfgs.push(r);
        for cfg in cfgs {
            for seed in 0..4 {
                let a = make_episode(seed, &cfg).unwrap();
                let b = make_episode(seed, &cfg).unwrap();
                assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
                a.task.validate().unwrap();
            }
        }
    }
}
