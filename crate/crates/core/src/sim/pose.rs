use serde::{Deserialize, Serialize};

use super::scene::Cell;
use super::{HORIZONS, ROTATION_STEP_DEG};
use crate::error::{Error, Result};

/// Agent position (meters), heading (degrees clockwise from +y) and camera
/// horizon (degrees, positive looks down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub position: [f64; 2],
    pub heading: i32,
    pub horizon: i32,
}

impl AgentPose {
    pub fn new(cell: Cell, heading: i32, horizon: i32) -> Self {
        AgentPose { position: cell.center(), heading, horizon }
    }

    pub fn cell(&self) -> Cell {
        Cell::of(self.position)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heading.rem_euclid(ROTATION_STEP_DEG) != 0 || !(0..360).contains(&self.heading) {
            return Err(Error::Config(format!("heading {} not in {{0, 30, ..., 330}}", self.heading)));
        }
        if !HORIZONS.contains(&self.horizon) {
            return Err(Error::Config(format!("horizon {} not in {{-30, 0, 30}}", self.horizon)));
        }
        Ok(())
    }

    pub fn heading_index(&self) -> usize {
        (self.heading / ROTATION_STEP_DEG) as usize
    }

    pub fn horizon_index(&self) -> usize {
        ((self.horizon + 30) / 30) as usize
    }

    /// Unit forward vector in the ground plane.
    pub fn forward(&self) -> [f64; 2] {
        let t = (self.heading as f64).to_radians();
        [t.sin(), t.cos()]
    }

    /// The grid step taken by MoveAhead: the cardinal direction nearest the
    /// heading. Headings are multiples of 30 degrees so there are no ties.
    pub fn move_step(&self) -> (i32, i32) {
        match ((self.heading as f64 / 90.0).round() as i32).rem_euclid(4) {
            0 => (0, 1),
            1 => (1, 0),
            2 => (0, -1),
            _ => (-1, 0),
        }
    }

    pub fn front_cell(&self) -> Cell {
        let (dx, dy) = self.move_step();
        self.cell().offset(dx, dy)
    }

    pub fn rotated(&self, steps: i32) -> AgentPose {
        AgentPose { heading: (self.heading + steps * ROTATION_STEP_DEG).rem_euclid(360), ..*self }
    }
}

pub fn headings() -> impl Iterator<Item = i32> {
    (0..360 / ROTATION_STEP_DEG).map(|i| i * ROTATION_STEP_DEG)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn move_step_snaps_to_nearest_cardinal() {
        let pose = |h| AgentPose::new(Cell::new(2, 2), h, 0);
        assert_eq!(pose(0).move_step(), (0, 1));
        assert_eq!(pose(30).move_step(), (0, 1));
        assert_eq!(pose(60).move_step(), (1, 0));
        assert_eq!(pose(120).move_step(), (1, 0));
        assert_eq!(pose(150).move_step(), (0, -1));
        assert_eq!(pose(240).move_step(), (-1, 0));
        assert_eq!(pose(330).move_step(), (0, 1));
    }

    #[test]
    fn rotation_wraps() {
        let p = AgentPose::new(Cell::new(0, 0), 330, 0);
        assert_eq!(p.rotated(1).heading, 0);
        assert_eq!(p.rotated(-12).heading, 330);
        assert!(AgentPose { heading: 45, ..p }.validate().is_err());
        assert!(AgentPose { horizon: 60, ..p }.validate().is_err());
    }
}
