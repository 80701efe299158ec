use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use super::BackboneSpec;
use crate::error::{Error, Result};
use crate::rng::rng_from_bytes;

/// Seed shared by every stub text encoder, so a category name maps to the same
/// direction regardless of the backbone it is paired with.
pub const TEXT_SEED: u64 = 0x7465_7874;

/// Hash `name` to a unit vector of length `dim`.
pub fn text_embed(name: &str, dim: usize) -> Vec<f64> {
    let mut rng = rng_from_bytes(TEXT_SEED, name.as_bytes());
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Frozen text-goal embedding with the backbone's text dimension.
pub fn text_goal_embed(category_name: &str, spec: &BackboneSpec) -> Result<Vec<f64>> {
    if category_name.is_empty() {
        return Err(Error::Empty("category name".into()));
    }
    Ok(text_embed(category_name, spec.text_dim()))
}

/// Load externally computed text embeddings from a JSON object `{name: [f64, ...]}`.
pub fn load_text_embeddings(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let bytes = std::fs::read(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    Ok(serde_json::from_slice(&bytes)?)
}
