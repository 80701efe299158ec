use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{Pooling, Split};
use crate::encoders::files::{f32_from_le, f32_to_le, read_artifact};
use crate::encoders::{average_pool, Backbone};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::sim::labels::labels_from_view;
use crate::sim::pose::headings;
use crate::sim::scene::generate_scene;
use crate::sim::{render_frame, AgentPose, ProbeLabels, Reach, RenderConfig, SimConfig, HORIZONS};

fn d_scenes() -> [usize; 3] {
    [60, 15, 15]
}
fn d_frames() -> [usize; 3] {
    [100, 50, 50]
}

/// Scene and frame counts per split (train, val, test).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeDataConfig {
    pub sim: SimConfig,
    #[serde(default = "d_scenes")]
    pub scenes: [usize; 3],
    #[serde(default = "d_frames")]
    pub frames: [usize; 3],
    #[serde(default)]
    pub seed: u64,
}

impl ProbeDataConfig {
    /// 52 categories, 60/15/15 scenes, 100/50/50 frames per scene.
    pub fn full(seed: u64) -> Self {
        let sim = SimConfig { obstacle_fraction: 0.1, ..SimConfig::object_nav(8, 16, 52, 1) };
        ProbeDataConfig { sim, scenes: d_scenes(), frames: d_frames(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.scenes.contains(&0) || self.frames.contains(&0) {
            return Err(Error::Config("every split needs at least one scene and one frame".into()));
        }
        Ok(())
    }

    /// Scene seeds of a split; disjoint across splits.
    pub fn scene_seeds(&self, split: Split) -> Vec<u64> {
        let s = SeedStream::new(self.seed).child("probe-scenes").child(split.name());
        (0..self.scenes[split.index()] as u64).map(|i| s.index(i).seed()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub split: Split,
    pub labels: ProbeLabels,
    /// Per category: whether this frame's reachability decision is in the balanced set.
    pub reach_mask: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeManifest {
    pub backbone: String,
    pub backbone_hash: String,
    pub pooling: Pooling,
    /// Feature values per record.
    pub dim: usize,
    pub category_count: usize,
    pub records: usize,
    pub dtype: String,
    pub config: ProbeDataConfig,
}

/// Half-open record index ranges per split plus their scene seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: [usize; 2],
    pub val: [usize; 2],
    pub test: [usize; 2],
    pub scene_seeds: [Vec<u64>; 3],
}

impl SplitRanges {
    pub fn range(&self, split: Split) -> std::ops::Range<usize> {
        let r = match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        };
        r[0]..r[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub manifest: ProbeManifest,
    pub splits: SplitRanges,
    /// Record-major, `records x dim`.
    pub features: Vec<f32>,
    pub records: Vec<ProbeRecord>,
}

const MANIFEST: &str = "manifest.json";
const FEATURES: &str = "features.bin";
const LABELS: &str = "labels.bin";
const SPLITS: &str = "splits.json";

fn pooled_dim(backbone: &Backbone, pooling: Pooling) -> Result<usize> {
    let spec = &backbone.spec;
    match pooling {
        Pooling::Average => Ok(spec.channels),
        Pooling::Grid if spec.spatial >= 3 => Ok(spec.channels * 9),
        Pooling::Grid => {
            Err(Error::Config(format!("3x3 pooling needs spatial >= 3, backbone {} has {}", spec.id, spec.spatial)))
        }
        Pooling::Attention => match &spec.attention {
            Some(a) => Ok(a.out_dim),
            None => Err(Error::Config(format!("backbone {} has no attention pool", spec.id))),
        },
    }
}

struct SceneRecords {
    features: Vec<f32>,
    labels: Vec<ProbeLabels>,
}

fn scene_records(
    cfg: &ProbeDataConfig,
    seed: u64,
    frames: usize,
    backbone: &Backbone,
    pooling: Pooling,
) -> Result<SceneRecords> {
    let scene = generate_scene(seed, &cfg.sim)?;
    let render_cfg = RenderConfig::from(&cfg.sim);
    let mut poses = Vec::new();
    for (i, free) in scene.traversable_map().into_iter().enumerate() {
        if free {
            let cell = scene.grid.cell_at(i);
            for h in headings() {
                for v in HORIZONS {
                    poses.push(AgentPose::new(cell, h, v));
                }
            }
        }
    }
    if frames > poses.len() {
        return Err(Error::Config(format!(
            "{frames} frames requested but scene {seed} has {} distinct poses",
            poses.len()
        )));
    }
    let mut rng = SeedStream::new(cfg.seed).child("probe-poses").index(seed).rng();
    let mut out = SceneRecords { features: Vec::new(), labels: Vec::with_capacity(frames) };
    for i in index::sample(&mut rng, poses.len(), frames) {
        let pose = poses[i];
        let frame = render_frame(&scene, &pose, &render_cfg);
        let f = backbone.encode(&frame)?;
        let v = match pooling {
            Pooling::Average => average_pool(&f, 1)?,
            Pooling::Grid => average_pool(&f, 3)?,
            Pooling::Attention => backbone.attention_pool(&f)?,
        };
        out.features.extend(v.iter().map(|&x| x as f32));
        out.labels.push(labels_from_view(&scene, &pose, &frame.view));
    }
    Ok(out)
}

/// Per category, keep equal numbers of reachable and visible-but-unreachable
/// decisions within a split, dropping a seeded random subset of the majority.
fn balance_reachability(records: &mut [ProbeRecord], k: usize, seed: u64, split: Split) {
    let mut rng = SeedStream::new(seed).child("probe-balance").child(split.name()).rng();
    for cat in 0..k {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (i, r) in records.iter().enumerate() {
            match r.labels.reachability[cat] {
                Reach::Reachable => pos.push(i),
                Reach::VisibleNotReachable => neg.push(i),
                Reach::Absent => {}
            }
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let n = pos.len().min(neg.len());
        for &i in pos[..n].iter().chain(&neg[..n]) {
            records[i].reach_mask[cat] = 1;
        }
    }
}

/// Render random views of held-apart scenes, encode each frame once and pool it.
/// Scenes are processed on up to `threads` threads without affecting the result.
pub fn generate_probe_dataset(
    cfg: &ProbeDataConfig,
    backbone: &Backbone,
    pooling: Pooling,
    threads: usize,
) -> Result<ProbeDataset> {
    cfg.validate()?;
    if backbone.spec.image_size != cfg.sim.image_size {
        return Err(Error::Config(format!(
            "backbone {} expects {}px images, scenes render at {}px",
            backbone.spec.id, backbone.spec.image_size, cfg.sim.image_size
        )));
    }
    let dim = pooled_dim(backbone, pooling)?;
    let seeds: [Vec<u64>; 3] = Split::ALL.map(|s| cfg.scene_seeds(s));
    let mut all: Vec<u64> = seeds.concat();
    all.sort_unstable();
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("scene seeds collide across splits".into()));
    }
    let jobs: Vec<(Split, u64)> =
        Split::ALL.iter().flat_map(|&s| seeds[s.index()].iter().map(move |&x| (s, x))).collect();
    let run = |&(split, seed): &(Split, u64)| scene_records(cfg, seed, cfg.frames[split.index()], backbone, pooling);
    let results: Vec<Result<SceneRecords>> = if threads <= 1 {
        jobs.iter().map(run).collect()
    } else {
        let chunk = jobs.len().div_ceil(threads.min(jobs.len()).max(1));
        std::thread::scope(|s| {
            let handles: Vec<_> =
                jobs.chunks(chunk).map(|c| s.spawn(move || c.iter().map(run).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("probe worker panicked")).collect()
        })
    };
    let k = cfg.sim.category_count;
    let mut features = Vec::new();
    let mut records = Vec::new();
    for ((split, _), r) in jobs.iter().zip(results) {
        let r = r?;
        features.extend(r.features);
        records.extend(r.labels.into_iter().map(|labels| ProbeRecord {
            split: *split,
            labels,
            reach_mask: vec![0; k],
        }));
    }
    let mut bounds = [[0usize; 2]; 3];
    let mut start = 0;
    for s in Split::ALL {
        let n = records.iter().filter(|r| r.split == s).count();
        bounds[s.index()] = [start, start + n];
        balance_reachability(&mut records[start..start + n], k, cfg.seed, s);
        start += n;
    }
    let manifest = ProbeManifest {
        backbone: backbone.spec.id.clone(),
        backbone_hash: backbone.param_hash(),
        pooling,
        dim,
        category_count: k,
        records: records.len(),
        dtype: "f32-le".into(),
        config: cfg.clone(),
    };
    let splits = SplitRanges { train: bounds[0], val: bounds[1], test: bounds[2], scene_seeds: seeds };
    Ok(ProbeDataset { manifest, splits, features, records })
}

impl ProbeDataset {
    pub fn feature(&self, i: usize) -> &[f32] {
        let d = self.manifest.dim;
        &self.features[i * d..(i + 1) * d]
    }

    pub fn indices(&self, split: Split) -> std::ops::Range<usize> {
        self.splits.range(split)
    }

    fn label_stride(&self) -> usize {
        12 * self.manifest.category_count + 1
    }

    fn encode_labels(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.len() * self.label_stride());
        for r in &self.records {
            out.extend(&r.labels.presence);
            out.extend(&r.labels.localization);
            out.push(r.labels.free_space);
            out.extend(r.labels.reachability.iter().map(|&x| x as u8));
            out.extend(&r.reach_mask);
        }
        out
    }

    /// `manifest.json`, `features.bin` (f32 LE, record-major), `labels.bin`
    /// (per record: presence K, localization 9K, free space 1, reachability K,
    /// balanced mask K bytes) and `splits.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(FEATURES), f32_to_le(&self.features))?;
        fs::write(dir.join(LABELS), self.encode_labels())?;
        fs::write(dir.join(SPLITS), serde_json::to_vec_pretty(&self.splits)?)?;
        fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: ProbeManifest = serde_json::from_slice(&read_artifact(&dir.join(MANIFEST))?)?;
        let splits: SplitRanges = serde_json::from_slice(&read_artifact(&dir.join(SPLITS))?)?;
        let features = f32_from_le(&read_artifact(&dir.join(FEATURES))?)?;
        let bytes = read_artifact(&dir.join(LABELS))?;
        let k = manifest.category_count;
        let stride = 12 * k + 1;
        if features.len() != manifest.records * manifest.dim || bytes.len() != manifest.records * stride {
            return Err(Error::Format(format!("probe dataset in {} does not match its manifest", dir.display())));
        }
        let reach = |b: u8| match b {
            0 => Ok(Reach::Absent),
            1 => Ok(Reach::VisibleNotReachable),
            2 => Ok(Reach::Reachable),
            _ => Err(Error::Format(format!("bad reachability byte {b}"))),
        };
        let mut records = Vec::with_capacity(manifest.records);
        for (i, b) in bytes.chunks_exact(stride).enumerate() {
            let split = Split::ALL
                .into_iter()
                .find(|&s| splits.range(s).contains(&i))
                .ok_or_else(|| Error::Format(format!("record {i} is in no split")))?;
            let labels = ProbeLabels {
                presence: b[..k].to_vec(),
                localization: b[k..10 * k].to_vec(),
                free_space: b[10 * k],
                reachability: b[10 * k + 1..11 * k + 1].iter().map(|&x| reach(x)).collect::<Result<_>>()?,
            };
            records.push(ProbeRecord { split, labels, reach_mask: b[11 * k + 1..].to_vec() });
        }
        Ok(ProbeDataset { manifest, splits, features, records })
    }
}
