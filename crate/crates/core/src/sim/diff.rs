use serde::{Deserialize, Serialize};

use super::scene::SceneSpec;
use super::CELL_SIZE;
use crate::error::{Error, Result};

/// Position differences at or below this are considered equal.
pub const POSITION_TOLERANCE: f64 = CELL_SIZE;

/// One object that differs between two scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDiff {
    pub id: u32,
    /// Center displacement in meters (0 when only the open state differs).
    pub displacement: f64,
    pub state_differs: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub objects: Vec<ObjectDiff>,
}

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.objects.iter().map(|d| d.id).collect()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.objects.iter().any(|d| d.id == id)
    }

    /// Summed displacement plus 1.0 per wrong open/closed state.
    pub fn energy(&self) -> f64 {
        self.objects.iter().map(|d| d.displacement + if d.state_differs { 1.0 } else { 0.0 }).sum()
    }
}

/// Objects whose position differs by more than 0.25 m or whose open state differs.
/// Carried objects are compared by their last resting position.
pub fn rearrangement_diff(current: &SceneSpec, goal: &SceneSpec) -> Result<DiffReport> {
    if current.objects.len() != goal.objects.len() {
        return Err(Error::SceneMismatch(format!(
            "object counts differ: {} vs {}",
            current.objects.len(),
            goal.objects.len()
        )));
    }
    let mut objects = Vec::new();
    for c in &current.objects {
        let g = goal
            .object(c.id)
            .ok_or_else(|| Error::SceneMismatch(format!("object {} missing from goal scene", c.id)))?;
        let dx = c.position[0] - g.position[0];
        let dy = c.position[1] - g.position[1];
        let displacement = (dx * dx + dy * dy).sqrt();
        let state_differs = current.is_open(c.id) != goal.is_open(c.id);
        let moved = displacement > POSITION_TOLERANCE || c.carried;
        if moved || state_differs {
            objects.push(ObjectDiff { id: c.id, displacement: if moved { displacement } else { 0.0 }, state_differs });
        }
    }
    Ok(DiffReport { objects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{generate_scene, is_openable, SimConfig};

    fn base() -> SceneSpec {
        generate_scene(5, &SimConfig::object_nav(7, 6, 12, 50)).unwrap()
    }

    #[test]
    fn identical_scenes_have_empty_diff() {
        let s = base();
        assert!(rearrangement_diff(&s, &s).unwrap().is_empty());
    }

    #[test]
    fn open_state_flip_is_reported() {
        let goal = base();
        let mut cur = goal.clone();
        let id = cur.objects.iter().find(|o| is_openable(o.category)).unwrap().id;
        let flag = cur.openables.get_mut(&id).unwrap();
        *flag = !*flag;
        let d = rearrangement_diff(&cur, &goal).unwrap();
        assert_eq!(d.ids(), vec![id]);
        assert!(d.objects[0].state_differs);
        assert_eq!(d.energy(), 1.0);
    }

    #[test]
    fn displacement_threshold() {
        let goal = base();
        let mut cur = goal.clone();
        cur.objects[1].position[0] += 0.5;
        let d = rearrangement_diff(&cur, &goal).unwrap();
        assert_eq!(d.ids(), vec![1]);
        assert!((d.objects[0].displacement - 0.5).abs() < 1e-12);
        let mut cur = goal.clone();
        cur.objects[1].position[1] -= 0.1;
        assert!(rearrangement_diff(&cur, &goal).unwrap().is_empty());
    }

    #[test]
    fn mismatched_ids_error() {
        let goal = base();
        let mut cur = goal.clone();
        cur.objects.pop();
        assert!(rearrangement_diff(&cur, &goal).is_err());
    }
}
