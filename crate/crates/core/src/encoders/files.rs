//! Feature files: `manifest.json` plus row-major little-endian `features.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const FEATURES: &str = "features.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub backbone_id: String,
    pub channels: usize,
    pub spatial: usize,
    pub count: usize,
    pub dtype: String,
}

/// A frame-major collection of feature maps from one backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub manifest: FeatureManifest,
    pub data: Vec<f32>,
}

pub fn f32_to_le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f32_from_le(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!("{} bytes is not a whole number of f32 values", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn f64_to_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64_from_le(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!("{} bytes is not a whole number of f64 values", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])).collect())
}

/// Read a file, reporting a missing file as a missing artifact.
pub fn read_artifact(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

impl FeatureFile {
    pub fn new(backbone_id: &str, channels: usize, spatial: usize) -> Self {
        FeatureFile {
            manifest: FeatureManifest {
                backbone_id: backbone_id.into(),
                channels,
                spatial,
                count: 0,
                dtype: "f32-le".into(),
            },
            data: Vec::new(),
        }
    }

    fn frame_len(&self) -> usize {
        self.manifest.channels * self.manifest.spatial * self.manifest.spatial
    }

    pub fn push(&mut self, f: &FeatureMap) -> Result<()> {
        if f.channels != self.manifest.channels || f.spatial != self.manifest.spatial {
            return Err(Error::Shape {
                expected: format!("{}x{}", self.manifest.channels, self.manifest.spatial),
                got: format!("{}x{}", f.channels, f.spatial),
            });
        }
        self.data.extend_from_slice(&f.data);
        self.manifest.count += 1;
        Ok(())
    }

    pub fn get(&self, index: usize) -> Result<FeatureMap> {
        if index >= self.manifest.count {
            return Err(Error::OutOfRange { index, limit: self.manifest.count });
        }
        let n = self.frame_len();
        FeatureMap::new(
            &self.manifest.backbone_id,
            self.manifest.channels,
            self.manifest.spatial,
            self.data[index * n..(index + 1) * n].to_vec(),
        )
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&self.manifest)?)?;
        fs::write(dir.join(FEATURES), f32_to_le(&self.data))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: FeatureManifest = serde_json::from_slice(&read_artifact(&dir.join(MANIFEST))?)?;
        if manifest.dtype != "f32-le" {
            return Err(Error::Format(format!("unsupported dtype {}", manifest.dtype)));
        }
        let data = f32_from_le(&read_artifact(&dir.join(FEATURES))?)?;
        let file = FeatureFile { manifest, data };
        if file.data.len() != file.manifest.count * file.frame_len() {
            return Err(Error::Format(format!(
                "features.bin holds {} values, manifest implies {}",
                file.data.len(),
                file.manifest.count * file.frame_len()
            )));
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut file = FeatureFile::new("stub", 2, 2);
        let odd = [f32::MIN_POSITIVE, -0.0, 1.0e-38, std::f32::consts::PI, f32::MAX, -1.5, 0.1, 7.0];
        file.push(&FeatureMap::new("stub", 2, 2, odd.to_vec()).unwrap()).unwrap();
        file.write(dir.path()).unwrap();
        let back = FeatureFile::read(dir.path()).unwrap();
        assert_eq!(f32_to_le(&back.data), f32_to_le(&file.data));
        assert_eq!(back.manifest, file.manifest);
        assert!(matches!(FeatureFile::read(&dir.path().join("nope")), Err(Error::MissingArtifact(_))));
    }
}
