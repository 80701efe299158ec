use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::task::TaskKind;
use super::CELL_SIZE;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Names for the first categories; the first twelve are the object-goal targets.
pub const CATEGORY_NAMES: [&str; 52] = [
    "AlarmClock",
    "Apple",
    "BaseballBat",
    "BasketBall",
    "Bowl",
    "GarbageCan",
    "HousePlant",
    "Laptop",
    "Mug",
    "SprayBottle",
    "Television",
    "Vase",
    "Book",
    "Bottle",
    "Box",
    "Bread",
    "Candle",
    "Cabinet",
    "CellPhone",
    "Chair",
    "Cloth",
    "CoffeeMachine",
    "Cup",
    "Drawer",
    "Egg",
    "Fork",
    "Fridge",
    "Kettle",
    "Knife",
    "Lamp",
    "Lettuce",
    "Microwave",
    "Newspaper",
    "Pan",
    "Pen",
    "Pencil",
    "Pillow",
    "Plate",
    "Pot",
    "Potato",
    "RemoteControl",
    "Safe",
    "SaltShaker",
    "Spatula",
    "Spoon",
    "Statue",
    "TeddyBear",
    "TissueBox",
    "Toaster",
    "Tomato",
    "Watch",
    "WineBottle",
];

pub fn category_name(category: usize) -> String {
    CATEGORY_NAMES.get(category).map(|s| s.to_string()).unwrap_or_else(|| format!("Category{category}"))
}

/// Every third category (2, 5, 8, ...) is an openable receptacle. Openables are
/// never picked up; every other category is pickupable.
pub fn is_openable(category: usize) -> bool {
    category % 3 == 2
}

fn default_image_size() -> usize {
    64
}

fn default_fov() -> f64 {
    90.0
}

/// Scene and episode parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Grid width and height in cells.
    pub grid_size: [usize; 2],
    pub object_count: usize,
    pub category_count: usize,
    pub max_steps: usize,
    #[serde(default)]
    pub obstacle_fraction: f64,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    pub task: TaskConfig,
}

/// Task-kind specific generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    ObjectNav {
        /// Categories eligible as goals; `None` means any present category.
        #[serde(default)]
        goal_categories: Option<Vec<usize>>,
    },
    PointNav {
        #[serde(default = "default_min_goal_cells")]
        min_goal_cells: usize,
    },
    Rearrange1Phase {
        misplaced: usize,
        /// Allow position displacements in addition to open/closed flips.
        #[serde(default = "default_true")]
        allow_moves: bool,
        /// Maximum displacement in cells for moved objects.
        #[serde(default = "default_move_radius")]
        move_radius: usize,
        /// Require every misplaced object to be visible from the start pose.
        #[serde(default)]
        start_in_view: bool,
    },
}

fn default_min_goal_cells() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_move_radius() -> usize {
    3
}

impl TaskConfig {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskConfig::ObjectNav { .. } => TaskKind::ObjectNav,
            TaskConfig::PointNav { .. } => TaskKind::PointNav,
            TaskConfig::Rearrange1Phase { .. } => TaskKind::Rearrange1Phase,
        }
    }
}

impl SimConfig {
    pub fn object_nav(grid: usize, objects: usize, categories: usize, max_steps: usize) -> Self {
        SimConfig {
            grid_size: [grid, grid],
            object_count: objects,
            category_count: categories,
            max_steps,
            obstacle_fraction: 0.0,
            image_size: default_image_size(),
            fov_deg: default_fov(),
            task: TaskConfig::ObjectNav { goal_categories: None },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.grid_size;
        if w < 5 || h < 5 {
            return Err(Error::Config(format!("grid must be at least 5x5, got {w}x{h}")));
        }
        if self.object_count < 1 {
            return Err(Error::Config("object_count must be at least 1".into()));
        }
        if self.category_count < 2 {
            return Err(Error::Config("category_count must be at least 2".into()));
        }
        if self.max_steps < 1 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if !(0.0..0.9).contains(&self.obstacle_fraction) {
            return Err(Error::Config("obstacle_fraction must be in [0, 0.9)".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config("image_size must be at least 8".into()));
        }
        if !(10.0..170.0).contains(&self.fov_deg) {
            return Err(Error::Config("fov_deg must be in [10, 170)".into()));
        }
        // One cell is reserved for the agent.
        if self.object_count + 1 > w * h {
            return Err(Error::Config(format!(
                "object_count {} exceeds the {} free cells of a {w}x{h} grid",
                self.object_count,
                w * h - 1
            )));
        }
        if let TaskConfig::ObjectNav { goal_categories: Some(g) } = &self.task {
            if g.is_empty() || g.iter().any(|&c| c >= self.category_count) {
                return Err(Error::Config("goal_categories must be non-empty and < category_count".into()));
            }
        }
        Ok(())
    }
}

/// Grid cell coordinate (column, row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn of(position: [f64; 2]) -> Self {
        Cell { x: (position[0] / CELL_SIZE).floor() as i32, y: (position[1] / CELL_SIZE).floor() as i32 }
    }

    pub fn center(self) -> [f64; 2] {
        [(self.x as f64 + 0.5) * CELL_SIZE, (self.y as f64 + 0.5) * CELL_SIZE]
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Cell { x: self.x + dx, y: self.y + dy }
    }
}

/// Static wall layout. `walls[y * width + x]` is true for blocked cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    pub walls: Vec<bool>,
}

impl OccupancyGrid {
    pub fn open(width: usize, height: usize) -> Self {
        OccupancyGrid { width, height, walls: vec![false; width * height] }
    }

    /// Parse rows of `#` (wall) and `.` (free); the first row is the top (highest y).
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut grid = OccupancyGrid::open(width, height);
        for (r, row) in rows.iter().enumerate() {
            let y = height - 1 - r;
            for (x, ch) in row.chars().enumerate() {
                grid.walls[y * width + x] = ch == '#';
            }
        }
        grid
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    pub fn index(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    /// Out-of-bounds cells count as walls.
    pub fn is_wall(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.walls[self.index(c)]
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.walls.is_empty()
    }
}

/// A placed object. Objects are vertical cylinders that block their cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: u32,
    pub category: usize,
    pub position: [f64; 2],
    pub height: f64,
    pub visible_radius: f64,
    /// Held by the agent: neither rendered nor blocking.
    #[serde(default, skip_serializing_if = "is_false")]
    pub carried: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl ObjectInstance {
    pub fn cell(&self) -> Cell {
        Cell::of(self.position)
    }
}

/// The world: walls, objects and open/closed state of openables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub grid: OccupancyGrid,
    pub objects: Vec<ObjectInstance>,
    pub openables: BTreeMap<u32, bool>,
    pub category_count: usize,
}

impl SceneSpec {
    pub fn object(&self, id: u32) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: u32) -> Option<&mut ObjectInstance> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn is_open(&self, id: u32) -> bool {
        self.openables.get(&id).copied().unwrap_or(false)
    }

    /// Cells the agent can stand on: inside the grid, not a wall, no resting object.
    pub fn traversable_map(&self) -> Vec<bool> {
        let mut map: Vec<bool> = self.grid.walls.iter().map(|w| !w).collect();
        for o in self.objects.iter().filter(|o| !o.carried) {
            let c = o.cell();
            if self.grid.in_bounds(c) {
                let i = self.grid.index(c);
                map[i] = false;
            }
        }
        map
    }

    pub fn is_traversable(&self, c: Cell) -> bool {
        !self.grid.is_wall(c) && !self.objects.iter().any(|o| !o.carried && o.cell() == c)
    }

    /// Check the structural invariants of a generated scene.
    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            if o.id as usize != i {
                return Err(Error::SceneMismatch(format!("object ids must be dense, found {} at {i}", o.id)));
            }
            if o.category >= self.category_count {
                return Err(Error::OutOfRange { index: o.category, limit: self.category_count });
            }
            if !o.carried && self.grid.is_wall(o.cell()) {
                return Err(Error::SceneMismatch(format!("object {} sits in a wall cell", o.id)));
            }
        }
        for id in self.openables.keys() {
            match self.object(*id) {
                Some(o) if is_openable(o.category) => {}
                _ => return Err(Error::SceneMismatch(format!("openable flag on non-openable object {id}"))),
            }
        }
        let map = self.traversable_map();
        if !is_connected(&self.grid, &map) {
            return Err(Error::SceneMismatch("free space is not connected".into()));
        }
        Ok(())
    }
}

/// True when the `free` cells form one 4-connected region with at least one cell.
pub fn is_connected(grid: &OccupancyGrid, free: &[bool]) -> bool {
    let Some(start) = free.iter().position(|&f| f) else {
        return false;
    };
    let total = free.iter().filter(|&&f| f).count();
    let mut seen = vec![false; free.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        let c = grid.cell_at(i);
        for (dx, dy) in [(0, 1), (1, 0), (0, -1), (-1, 0)] {
            let n = c.offset(dx, dy);
            if grid.in_bounds(n) {
                let j = grid.index(n);
                if free[j] && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
    }
    count == total
}

/// Procedurally generate a connected room. Identical arguments give identical scenes.
pub fn generate_scene(seed: u64, config: &SimConfig) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = SeedStream::new(seed).child("scene").rng();
    let [w, h] = config.grid_size;
    let mut grid = OccupancyGrid::open(w, h);

    let n_obstacles = (config.obstacle_fraction * (w * h) as f64).round() as usize;
    if n_obstacles > 0 {
        let mut order: Vec<usize> = (0..w * h).collect();
        order.shuffle(&mut rng);
        let mut placed = 0;
        for i in order {
            if placed == n_obstacles {
                break;
            }
            grid.walls[i] = true;
            let free: Vec<bool> = grid.walls.iter().map(|w| !w).collect();
            // Keep room for the objects plus the agent.
            let free_count = free.iter().filter(|&&f| f).count();
            if free_count < config.object_count + 2 || !is_connected(&grid, &free) {
                grid.walls[i] = false;
            } else {
                placed += 1;
            }
        }
    }

    let free_cells = grid.walls.iter().filter(|w| !**w).count();
    if config.object_count >= free_cells {
        return Err(Error::Config(format!(
            "object_count {} exceeds available free cells {}",
            config.object_count,
            free_cells.saturating_sub(1)
        )));
    }

    let mut categories: Vec<usize> = (0..config.category_count).collect();
    categories.shuffle(&mut rng);
    let mut chosen: Vec<usize> = categories.into_iter().take(config.object_count).collect();
    while chosen.len() < config.object_count {
        chosen.push(rng.gen_range(0..config.category_count));
    }

    let mut traversable: Vec<bool> = grid.walls.iter().map(|w| !w).collect();
    let mut candidates: Vec<usize> = (0..w * h).filter(|&i| traversable[i]).collect();
    candidates.shuffle(&mut rng);
    let mut objects = Vec::with_capacity(config.object_count);
    let mut openables = BTreeMap::new();
    for i in candidates {
        if objects.len() == config.object_count {
            break;
        }
        traversable[i] = false;
        let cell = grid.cell_at(i);
        let has_free_neighbour = [(0, 1), (1, 0), (0, -1), (-1, 0)].iter().any(|&(dx, dy)| {
            let n = cell.offset(dx, dy);
            grid.in_bounds(n) && traversable[grid.index(n)]
        });
        if !has_free_neighbour || !is_connected(&grid, &traversable) {
            traversable[i] = true;
            continue;
        }
        let id = objects.len() as u32;
        let category = chosen[objects.len()];
        objects.push(ObjectInstance {
            id,
            category,
            position: cell.center(),
            height: rng.gen_range(0.2..1.4),
            visible_radius: rng.gen_range(0.07..0.11),
            carried: false,
        });
        if is_openable(category) {
            openables.insert(id, rng.gen_bool(0.5));
        }
    }
    if objects.len() < config.object_count {
        return Err(Error::Config(format!(
            "could only place {} of {} objects while keeping free space connected",
            objects.len(),
            config.object_count
        )));
    }

    let scene = SceneSpec { seed, grid, objects, openables, category_count: config.category_count };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_scene_places_objects_on_free_cells() {
        let cfg = SimConfig::object_nav(5, 2, 2, 50);
        let scene = generate_scene(0, &cfg).unwrap();
        assert_eq!(scene.objects.len(), 2);
        for o in &scene.objects {
            assert!(!scene.grid.is_wall(o.cell()));
        }
    }

    #[test]
    fn generation_is_byte_identical() {
        let mut cfg = SimConfig::object_nav(9, 6, 12, 50);
        cfg.obstacle_fraction = 0.15;
        let a = serde_json::to_vec(&generate_scene(0, &cfg).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate_scene(0, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_too_many_objects() {
        let cfg = SimConfig::object_nav(5, 25, 2, 50);
        assert!(matches!(generate_scene(0, &cfg), Err(Error::Config(_))));
        let cfg = SimConfig::object_nav(4, 1, 2, 50);
        assert!(generate_scene(0, &cfg).is_err());
    }

    #[test]
    fn openable_flags_only_on_openables() {
        let cfg = SimConfig::object_nav(10, 20, 52, 50);
        let scene = generate_scene(3, &cfg).unwrap();
        for id in scene.openables.keys() {
            assert!(is_openable(scene.object(*id).unwrap().category));
        }
        for o in &scene.objects {
            assert_eq!(is_openable(o.category), scene.openables.contains_key(&o.id));
        }
    }

    #[test]
    fn grid_rows_parse_top_down() {
        let g = OccupancyGrid::from_rows(&["#....", ".....", ".....", ".....", "....#"]);
        assert!(g.is_wall(Cell::new(0, 4)));
        assert!(g.is_wall(Cell::new(4, 0)));
        assert!(!g.is_wall(Cell::new(0, 0)));
        assert!(g.is_wall(Cell::new(-1, 0)));
    }
}
