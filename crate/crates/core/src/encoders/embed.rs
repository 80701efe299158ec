//! Trainable goal and previous-action embeddings. Tables live in the agent's
//! parameter store so gradients reach them during training.

use crate::error::{Error, Result};
use crate::nn::{Embedding, Linear, ParamStore};

pub fn goal_embed_category(g: usize, table: &Embedding, ps: &ParamStore) -> Result<Vec<f64>> {
    table.lookup(ps, g)
}

/// Affine map of (distance, angle) to the goal embedding.
pub fn goal_embed_polar(coords: [f64; 2], layer: &Linear, ps: &ParamStore) -> Result<Vec<f64>> {
    if !(coords[0] >= 0.0) {
        return Err(Error::Config(format!("polar distance must be non-negative, got {}", coords[0])));
    }
    Ok(layer.forward(ps, &coords))
}

/// Row `a` of the action table; `None` selects the reserved last row used at
/// episode start.
pub fn prev_action_embed(a: Option<usize>, table: &Embedding, ps: &ParamStore) -> Result<Vec<f64>> {
    let row = match a {
        Some(i) if i + 1 < table.rows => i,
        Some(i) => return Err(Error::OutOfRange { index: i, limit: table.rows - 1 }),
        None => table.rows - 1,
    };
    table.lookup(ps, row)
}
