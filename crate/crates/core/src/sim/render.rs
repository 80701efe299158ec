//! Ray-cast renderer. Walls are extruded grid cells, objects are vertical
//! cylinders, and every surface has a flat albedo so pixel colors identify
//! what was hit.

use super::labels::{free_steps, object_distance, FREE_SPACE_CLASSES};
use super::pose::AgentPose;
use super::scene::{Cell, ObjectInstance, SceneSpec, SimConfig};
use super::{CAMERA_HEIGHT, CELL_SIZE, WALL_HEIGHT};

pub const FLOOR_COLOR: [f32; 3] = [0.45, 0.40, 0.35];
pub const WALL_COLOR: [f32; 3] = [0.75, 0.75, 0.72];
pub const CEILING_COLOR: [f32; 3] = [0.92, 0.92, 0.92];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub image_size: usize,
    pub fov_deg: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { image_size: 64, fov_deg: 90.0 }
    }
}

impl From<&SimConfig> for RenderConfig {
    fn from(c: &SimConfig) -> Self {
        RenderConfig { image_size: c.image_size, fov_deg: c.fov_deg }
    }
}

/// 3 x S x S image, channel-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub size: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn zeros(size: usize) -> Self {
        RgbImage { size, data: vec![0.0; 3 * size * size] }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let plane = self.size * self.size;
        let i = row * self.size + col;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    fn set(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let plane = self.size * self.size;
        let i = row * self.size + col;
        self.data[i] = rgb[0];
        self.data[plane + i] = rgb[1];
        self.data[2 * plane + i] = rgb[2];
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Binary PPM (P6), 8 bits per channel.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.size, self.size).into_bytes();
        for row in 0..self.size {
            for col in 0..self.size {
                out.extend(self.pixel(row, col).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Surface {
    Floor,
    Wall,
    Ceiling,
    Object(u32),
}

/// Per-pixel ground truth of a rendered view: the surface hit and its
/// horizontal distance from the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBuffer {
    pub size: usize,
    pub surfaces: Vec<Surface>,
    pub depth: Vec<f32>,
}

/// Scene metadata for one resting object, as seen from the frame's pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMeta {
    pub id: u32,
    pub category: usize,
    /// Euclidean distance from the agent to the object center.
    pub distance: f64,
    pub height: f64,
    pub open: bool,
}

/// Privileged per-frame state that is not recoverable from pixels alone.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeta {
    pub objects: Vec<ObjectMeta>,
    /// Successful MoveAhead steps from the pose, capped at 10.
    pub free_steps: usize,
}

/// A rendered frame with its ground-truth buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: RgbImage,
    pub view: ViewBuffer,
    pub meta: FrameMeta,
}

fn hsv(h: f64, s: f64, v: f64) -> [f32; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

/// Albedo of a category; openables change color when open.
pub fn category_color(category: usize, open: bool) -> [f32; 3] {
    let hue = (category as f64 * 0.618_033_988_749_895).fract();
    if open {
        hsv(hue, 0.5, 0.55)
    } else {
        hsv(hue, 0.85, 0.95)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ray {
    /// Unit direction in the ground plane.
    pub dir: [f64; 2],
    /// Height change per meter of horizontal travel.
    pub slope: f64,
}

/// Pinhole camera at eye height.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Camera {
    origin: [f64; 2],
    forward: [f64; 2],
    right: [f64; 2],
    sin_pitch: f64,
    cos_pitch: f64,
    focal: f64,
    size: usize,
}

impl Camera {
    pub fn new(pose: &AgentPose, cfg: &RenderConfig) -> Self {
        let forward = pose.forward();
        let right = [forward[1], -forward[0]];
        let pitch = -(pose.horizon as f64).to_radians();
        let size = cfg.image_size;
        Camera {
            origin: pose.position,
            forward,
            right,
            sin_pitch: pitch.sin(),
            cos_pitch: pitch.cos(),
            focal: (size as f64 / 2.0) / (cfg.fov_deg.to_radians() / 2.0).tan(),
            size,
        }
    }

    pub fn ray(&self, row: usize, col: usize) -> Ray {
        let half = self.size as f64 / 2.0;
        let x = (col as f64 + 0.5 - half) / self.focal;
        let y = (half - (row as f64 + 0.5)) / self.focal;
        let along = self.cos_pitch - y * self.sin_pitch;
        let up = y * self.cos_pitch + self.sin_pitch;
        let h = [along * self.forward[0] + x * self.right[0], along * self.forward[1] + x * self.right[1]];
        let len = (h[0] * h[0] + h[1] * h[1]).sqrt();
        Ray { dir: [h[0] / len, h[1] / len], slope: up / len }
    }

    /// Project a world point to fractional (col, row); `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let rel = [p[0] - self.origin[0], p[1] - self.origin[1]];
        let f = rel[0] * self.forward[0] + rel[1] * self.forward[1];
        let xr = rel[0] * self.right[0] + rel[1] * self.right[1];
        let u = p[2] - CAMERA_HEIGHT;
        let zc = f * self.cos_pitch + u * self.sin_pitch;
        let yc = -f * self.sin_pitch + u * self.cos_pitch;
        if zc <= 1e-3 {
            return None;
        }
        let half = self.size as f64 / 2.0;
        Some((xr / zc * self.focal + half - 0.5, half - yc / zc * self.focal - 0.5))
    }
}

/// Horizontal distance to the first wall cell along `dir` (grid DDA).
fn wall_distance(scene: &SceneSpec, origin: [f64; 2], dir: [f64; 2]) -> f64 {
    let u = [origin[0] / CELL_SIZE, origin[1] / CELL_SIZE];
    let mut cell = Cell::of(origin);
    if scene.grid.is_wall(cell) {
        return 0.0;
    }
    let step = [if dir[0] > 0.0 { 1 } else { -1 }, if dir[1] > 0.0 { 1 } else { -1 }];
    let t_delta = [
        if dir[0] != 0.0 { 1.0 / dir[0].abs() } else { f64::INFINITY },
        if dir[1] != 0.0 { 1.0 / dir[1].abs() } else { f64::INFINITY },
    ];
    let mut t_max = [0.0; 2];
    for a in 0..2 {
        let c = if a == 0 { cell.x } else { cell.y } as f64;
        t_max[a] = if dir[a] > 0.0 {
            (c + 1.0 - u[a]) * t_delta[a]
        } else if dir[a] < 0.0 {
            (u[a] - c) * t_delta[a]
        } else {
            f64::INFINITY
        };
    }
    let limit = scene.grid.width + scene.grid.height + 4;
    for _ in 0..limit {
        let t;
        if t_max[0] < t_max[1] {
            t = t_max[0];
            t_max[0] += t_delta[0];
            cell.x += step[0];
        } else {
            t = t_max[1];
            t_max[1] += t_delta[1];
            cell.y += step[1];
        }
        if scene.grid.is_wall(cell) {
            return t * CELL_SIZE;
        }
    }
    f64::INFINITY
}

/// Distance to where a pixel ray enters an object's cylinder, if closer than `limit`.
fn ray_object_hit(origin: [f64; 2], ray: Ray, o: &ObjectInstance, limit: f64) -> Option<f64> {
    let oc = [origin[0] - o.position[0], origin[1] - o.position[1]];
    let b = oc[0] * ray.dir[0] + oc[1] * ray.dir[1];
    let c = oc[0] * oc[0] + oc[1] * oc[1] - o.visible_radius * o.visible_radius;
    let disc = b * b - c;
    if disc < 0.0 || c < 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let s_in = -b - root;
    let s_out = -b + root;
    if s_in <= 0.0 || s_in >= limit {
        return None;
    }
    let h_in = CAMERA_HEIGHT + ray.slope * s_in;
    if (0.0..=o.height).contains(&h_in) {
        return Some(s_in);
    }
    if h_in > o.height && ray.slope < 0.0 {
        // Descending ray may land on the top cap.
        let s_top = (o.height - CAMERA_HEIGHT) / ray.slope;
        if s_top >= s_in && s_top <= s_out && s_top < limit {
            return Some(s_top);
        }
    }
    None
}

/// First surface hit along a pixel ray.
pub(crate) fn trace(scene: &SceneSpec, origin: [f64; 2], ray: Ray) -> (Surface, f64) {
    let s_wall = wall_distance(scene, origin, ray.dir);
    let h_wall = CAMERA_HEIGHT + ray.slope * s_wall;
    let (mut surface, mut best) = if h_wall < 0.0 {
        (Surface::Floor, CAMERA_HEIGHT / -ray.slope)
    } else if h_wall > WALL_HEIGHT {
        (Surface::Ceiling, (WALL_HEIGHT - CAMERA_HEIGHT) / ray.slope)
    } else {
        (Surface::Wall, s_wall)
    };

    for o in scene.objects.iter().filter(|o| !o.carried) {
        if let Some(s) = ray_object_hit(origin, ray, o, best) {
            surface = Surface::Object(o.id);
            best = s;
        }
    }
    (surface, best)
}

fn surface_color(scene: &SceneSpec, s: Surface) -> [f32; 3] {
    match s {
        Surface::Floor => FLOOR_COLOR,
        Surface::Wall => WALL_COLOR,
        Surface::Ceiling => CEILING_COLOR,
        Surface::Object(id) => {
            let o = &scene.objects[id as usize];
            category_color(o.category, scene.is_open(id))
        }
    }
}

/// Render the RGB image and its ground-truth buffer.
pub fn render_frame(scene: &SceneSpec, pose: &AgentPose, cfg: &RenderConfig) -> Frame {
    let size = cfg.image_size;
    let cam = Camera::new(pose, cfg);
    let mut image = RgbImage::zeros(size);
    let mut surfaces = Vec::with_capacity(size * size);
    let mut depth = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let (s, d) = trace(scene, pose.position, cam.ray(row, col));
            image.set(row, col, surface_color(scene, s));
            surfaces.push(s);
            depth.push(d as f32);
        }
    }
    let objects = scene
        .objects
        .iter()
        .filter(|o| !o.carried)
        .map(|o| ObjectMeta {
            id: o.id,
            category: o.category,
            distance: object_distance(pose, o.position),
            height: o.height,
            open: scene.is_open(o.id),
        })
        .collect();
    let meta = FrameMeta { objects, free_steps: free_steps(scene, pose, FREE_SPACE_CLASSES - 1) };
    Frame { image, view: ViewBuffer { size, surfaces, depth }, meta }
}

pub fn render(scene: &SceneSpec, pose: &AgentPose, cfg: &RenderConfig) -> RgbImage {
    render_frame(scene, pose, cfg).image
}

/// Whether at least one pixel of the rendered view shows object `id`.
/// Agrees exactly with `render_frame`, but only traces pixels inside the
/// object's projected bounding box.
pub fn object_visible(scene: &SceneSpec, pose: &AgentPose, cfg: &RenderConfig, id: u32) -> bool {
    let Some(o) = scene.object(id) else {
        return false;
    };
    if o.carried {
        return false;
    }
    let cam = Camera::new(pose, cfg);
    let size = cfg.image_size;
    let mut bounds = Some((f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY));
    let mut any_front = false;
    'corners: for dx in [-1.0, 1.0] {
        for dy in [-1.0, 1.0] {
            for z in [0.0, o.height] {
                let p = [o.position[0] + dx * o.visible_radius, o.position[1] + dy * o.visible_radius, z];
                match cam.project(p) {
                    Some((c, r)) => {
                        any_front = true;
                        if let Some(b) = bounds.as_mut() {
                            b.0 = b.0.min(c);
                            b.1 = b.1.min(r);
                            b.2 = b.2.max(c);
                            b.3 = b.3.max(r);
                        }
                    }
                    None => {
                        bounds = None;
                        if any_front {
                            break 'corners;
                        }
                    }
                }
            }
        }
    }
    if !any_front {
        return false;
    }
    let (c0, r0, c1, r1) = match bounds {
        Some((c0, r0, c1, r1)) => {
            if c1 < -1.0 || r1 < -1.0 || c0 > size as f64 || r0 > size as f64 {
                return false;
            }
            let clamp = |v: f64| v.max(0.0).min((size - 1) as f64) as usize;
            (clamp(c0.floor() - 1.0), clamp(r0.floor() - 1.0), clamp(c1.ceil() + 1.0), clamp(r1.ceil() + 1.0))
        }
        None => (0, 0, size - 1, size - 1),
    };
    for row in r0..=r1 {
        for col in c0..=c1 {
            let ray = cam.ray(row, col);
            if ray_object_hit(pose.position, ray, o, f64::INFINITY).is_some()
                && trace(scene, pose.position, ray).0 == Surface::Object(id)
            {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{ObjectInstance, OccupancyGrid};
    use std::collections::BTreeMap;

    fn room(objects: Vec<ObjectInstance>) -> SceneSpec {
        SceneSpec { seed: 0, grid: OccupancyGrid::open(7, 7), objects, openables: BTreeMap::new(), category_count: 4 }
    }

    fn object(id: u32, category: usize, cell: Cell) -> ObjectInstance {
        ObjectInstance { id, category, position: cell.center(), height: 0.8, visible_radius: 0.1, carried: false }
    }

    #[test]
    fn facing_wall_shows_no_object_pixels() {
        let scene = room(vec![object(0, 1, Cell::new(3, 0))]);
        let pose = AgentPose::new(Cell::new(3, 6), 0, 0);
        let frame = render_frame(&scene, &pose, &RenderConfig::default());
        assert!(frame.view.surfaces.iter().all(|s| !matches!(s, Surface::Object(_))));
        assert!(frame.view.surfaces.contains(&Surface::Wall));
    }

    #[test]
    fn rendering_is_deterministic() {
        let scene = room(vec![object(0, 1, Cell::new(3, 5))]);
        let pose = AgentPose::new(Cell::new(3, 1), 0, 30);
        let cfg = RenderConfig::default();
        assert_eq!(render(&scene, &pose, &cfg), render(&scene, &pose, &cfg));
    }

    #[test]
    fn ppm_header_and_length() {
        let mut img = RgbImage::zeros(2);
        img.set(0, 1, [1.0, 0.5, 0.0]);
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(ppm.len(), 11 + 12);
        assert_eq!(&ppm[11 + 3..11 + 6], &[255, 128, 0]);
    }

    #[test]
    fn object_ahead_lands_in_center_third() {
        // Object 1 m ahead, dead center.
        let scene = room(vec![object(0, 2, Cell::new(3, 5))]);
        let pose = AgentPose::new(Cell::new(3, 1), 0, 0);
        let img = render(&scene, &pose, &RenderConfig::default());
        let color = category_color(2, false);
        let mut cols = vec![];
        for r in 0..64 {
            for c in 0..64 {
                if img.pixel(r, c) == color {
                    cols.push(c);
                }
            }
        }
        assert!(!cols.is_empty());
        // Ray-march oracle: the cylinder spans +-atan(0.1/1.0) around the axis.
        let half = (0.1f64 / 1.0).atan().tan() * 32.0;
        let (lo, hi) = ((32.0 - half).floor() as usize - 1, (32.0 + half).ceil() as usize + 1);
        assert!(cols.iter().all(|&c| c >= lo && c <= hi && (21..43).contains(&c)));
    }

    #[test]
    fn visibility_matches_full_render() {
        let scene =
            room(vec![object(0, 1, Cell::new(2, 4)), object(1, 3, Cell::new(5, 2)), object(2, 0, Cell::new(1, 1))]);
        let cfg = RenderConfig::default();
        for cell in [Cell::new(3, 3), Cell::new(0, 6), Cell::new(6, 0)] {
            for h in (0..12).map(|i| i * 30) {
                for v in [-30, 0, 30] {
                    let pose = AgentPose::new(cell, h, v);
                    let frame = render_frame(&scene, &pose, &cfg);
                    for id in 0..3 {
                        let seen = frame.view.surfaces.contains(&Surface::Object(id));
                        assert_eq!(seen, object_visible(&scene, &pose, &cfg, id), "{cell:?} {h} {v} {id}");
                    }
                }
            }
        }
    }

    #[test]
    fn palette_is_distinct() {
        let mut colors: Vec<[f32; 3]> =
            (0..52).flat_map(|c| [category_color(c, false), category_color(c, true)]).collect();
        colors.extend([FLOOR_COLOR, WALL_COLOR, CEILING_COLOR]);
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                assert_ne!(colors[i], colors[j]);
            }
        }
    }
}
