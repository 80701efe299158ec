//! Frozen visual backbones and the pooling/embedding operations built on them.

pub mod embed;
pub mod files;
pub mod pool;
pub mod stub;
pub mod text;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::rng::SeedStream;
use crate::sim::render::{Frame, RgbImage};

pub use embed::{goal_embed_category, goal_embed_polar, prev_action_embed};
pub use files::{FeatureFile, FeatureManifest};
pub use pool::{average_pool, AttentionPool};
pub use text::{text_embed, text_goal_embed};

/// C x S x S encoder output, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub backbone_id: String,
    pub channels: usize,
    pub spatial: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(backbone_id: impl Into<String>, channels: usize, spatial: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * spatial * spatial {
            return Err(Error::Shape {
                expected: format!("{channels}x{spatial}x{spatial}"),
                got: format!("{} values", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {v}")));
        }
        Ok(FeatureMap { backbone_id: backbone_id.into(), channels, spatial, data })
    }

    pub fn positions(&self) -> usize {
        self.spatial * self.spatial
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Where a backbone's weights or features come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackboneSource {
    /// Fixed-seed strided convolution stack over pixels.
    StubRandom { seed: u64 },
    /// Fixed linear map of ground-truth scene state read from the frame buffer.
    StubInformative { seed: u64, categories: usize },
    /// Features from a hash of the image bytes; carries no label information.
    StubNoise { seed: u64 },
    /// Convolution-stack weights loaded from a checkpoint directory.
    FileWeights { path: PathBuf },
    /// Precomputed features in a feature-file directory, indexed by frame.
    ExternalPretrained { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionSpec {
    pub out_dim: usize,
    pub heads: usize,
}

fn default_true() -> bool {
    true
}
fn default_image_size() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub id: String,
    pub channels: usize,
    pub spatial: usize,
    #[serde(default = "default_true")]
    pub frozen: bool,
    pub source: BackboneSource,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    /// Attention-pool weights; absent means attention pooling is unavailable.
    #[serde(default)]
    pub attention: Option<AttentionSpec>,
}

impl BackboneSpec {
    pub fn stub(id: &str, source: BackboneSource, channels: usize, spatial: usize) -> Self {
        BackboneSpec { id: id.into(), channels, spatial, frozen: true, source, image_size: 64, attention: None }
    }

    pub fn with_attention(mut self, out_dim: usize, heads: usize) -> Self {
        self.attention = Some(AttentionSpec { out_dim, heads });
        self
    }

    /// Dimension of text-goal embeddings paired with this backbone.
    pub fn text_dim(&self) -> usize {
        self.attention.as_ref().map_or(1024, |a| a.out_dim)
    }

    pub fn seed(&self) -> u64 {
        match self.source {
            BackboneSource::StubRandom { seed }
            | BackboneSource::StubInformative { seed, .. }
            | BackboneSource::StubNoise { seed } => seed,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.frozen {
            return Err(Error::Config(format!("backbone {} must be frozen", self.id)));
        }
        if self.channels == 0 || self.spatial == 0 {
            return Err(Error::Config("backbone channels and spatial must be positive".into()));
        }
        if let Some(a) = &self.attention {
            if a.heads == 0 || !self.channels.is_multiple_of(a.heads) {
                return Err(Error::Config(format!("{} heads do not divide {} channels", a.heads, self.channels)));
            }
        }
        Ok(())
    }
}

enum Kind {
    Conv(stub::ConvStack),
    Informative(stub::Informative),
    Noise,
    External(FeatureFile),
}

/// A constructed frozen backbone. Encoding never changes its parameters.
pub struct Backbone {
    pub spec: BackboneSpec,
    kind: Kind,
    attention: Option<AttentionPool>,
    encodes: AtomicU64,
}

impl std::fmt::Debug for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backbone").field("spec", &self.spec).finish()
    }
}

impl Backbone {
    pub fn new(spec: &BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let seeds = SeedStream::new(spec.seed()).child(&spec.id);
        let kind = match &spec.source {
            BackboneSource::StubRandom { .. } => {
                Kind::Conv(stub::ConvStack::random(spec, &mut seeds.child("conv").rng()))
            }
            BackboneSource::FileWeights { path } => Kind::Conv(stub::ConvStack::load(spec, path)?),
            BackboneSource::StubInformative { .. } => Kind::Informative(stub::Informative::new(spec, &seeds)),
            BackboneSource::StubNoise { .. } => Kind::Noise,
            BackboneSource::ExternalPretrained { dir } => {
                let file = FeatureFile::read(dir)?;
                if file.manifest.channels != spec.channels || file.manifest.spatial != spec.spatial {
                    return Err(Error::Shape {
                        expected: format!("{}x{}x{}", spec.channels, spec.spatial, spec.spatial),
                        got: format!("{}x{}x{}", file.manifest.channels, file.manifest.spatial, file.manifest.spatial),
                    });
                }
                Kind::External(file)
            }
        };
        let attention = match &spec.attention {
            Some(a) => {
                let identity = matches!(kind, Kind::Informative(_));
                Some(AttentionPool::new(
                    spec.channels,
                    spec.spatial * spec.spatial,
                    a.out_dim,
                    a.heads,
                    identity,
                    &mut seeds.child("attnpool").rng(),
                ))
            }
            None => None,
        };
        Ok(Backbone { spec: spec.clone(), kind, attention, encodes: AtomicU64::new(0) })
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    /// Number of `encode` calls so far.
    pub fn encode_count(&self) -> u64 {
        self.encodes.load(Ordering::Relaxed)
    }

    /// Encode a rendered frame. Pixel backbones use only the image.
    pub fn encode(&self, frame: &Frame) -> Result<FeatureMap> {
        match &self.kind {
            Kind::Informative(inf) => {
                self.check_image(&frame.image)?;
                self.encodes.fetch_add(1, Ordering::Relaxed);
                FeatureMap::new(&self.spec.id, self.spec.channels, self.spec.spatial, inf.encode(frame))
            }
            _ => self.encode_image(&frame.image),
        }
    }

    /// Encode pixels only; the informative stub needs a full frame.
    pub fn encode_image(&self, image: &RgbImage) -> Result<FeatureMap> {
        self.check_image(image)?;
        let data = match &self.kind {
            Kind::Conv(c) => c.forward(image),
            Kind::Noise => stub::noise_features(&self.spec, image),
            Kind::Informative(_) => {
                return Err(Error::Unsupported("informative backbone needs a rendered frame".into()))
            }
            Kind::External(_) => {
                return Err(Error::Unsupported("external backbone serves precomputed features via `lookup`".into()))
            }
        };
        self.encodes.fetch_add(1, Ordering::Relaxed);
        FeatureMap::new(&self.spec.id, self.spec.channels, self.spec.spatial, data)
    }

    /// Precomputed features for frame `index` of an external backbone.
    pub fn lookup(&self, index: usize) -> Result<FeatureMap> {
        match &self.kind {
            Kind::External(file) => file.get(index),
            _ => Err(Error::Unsupported("only external backbones serve precomputed features".into())),
        }
    }

    fn check_image(&self, image: &RgbImage) -> Result<()> {
        if image.size != self.spec.image_size || image.data.len() != 3 * image.size * image.size {
            return Err(Error::Shape {
                expected: format!("3x{0}x{0}", self.spec.image_size),
                got: format!("3x{0}x{0} ({1} values)", image.size, image.data.len()),
            });
        }
        Ok(())
    }

    pub fn attention_pool(&self, f: &FeatureMap) -> Result<Vec<f64>> {
        let pool = self
            .attention
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("backbone {} has no attention-pool weights", self.spec.id)))?;
        pool.forward(f)
    }

    /// All frozen parameters, for hashing and serialization.
    pub fn params(&self) -> ParamStore {
        let mut ps = ParamStore::new();
        match &self.kind {
            Kind::Conv(c) => c.export(&mut ps),
            Kind::Informative(i) => i.export(&mut ps),
            Kind::Noise => {
                ps.add("noise.seed", &[1], vec![self.spec.seed() as f64]);
            }
            Kind::External(f) => {
                ps.add("external.count", &[1], vec![f.manifest.count as f64]);
            }
        }
        if let Some(a) = &self.attention {
            a.export(&mut ps);
        }
        ps
    }

    /// SHA-256 of the frozen parameters.
    pub fn param_hash(&self) -> String {
        self.params().hash()
    }
}
