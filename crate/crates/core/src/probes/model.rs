use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{accuracy, micro_f1, ProbeDataset, ProbeTask, Split};
use crate::agents::argmax;
use crate::error::{Error, Result};
use crate::nn::io::{read_params, write_params};
use crate::nn::layers::Linear;
use crate::nn::{sigmoid, softmax, Adam, ParamStore};
use crate::rng::SeedStream;
use crate::sim::{Reach, FREE_SPACE_CLASSES};

fn d_lr() -> f64 {
    0.001
}
fn d_batch() -> usize {
    128
}
fn d_epochs() -> usize {
    500
}
fn d_patience() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeTrainConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ProbeTrainConfig {
    pub fn new(seed: u64) -> Self {
        ProbeTrainConfig { lr: d_lr(), batch_size: d_batch(), max_epochs: d_epochs(), patience: d_patience(), seed }
    }
}

/// A single linear map. Localization applies one shared C -> K map to each of
/// the nine grid cells, i.e. a 1x1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub task: ProbeTask,
    pub params: ParamStore,
    pub layer: Linear,
    pub categories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    /// Mean validation loss of the kept parameters.
    pub best_loss: f64,
    /// Validation metric of the kept parameters.
    pub best_val: f64,
}

impl ProbeModel {
    pub fn new(task: ProbeTask, dim: usize, categories: usize, seed: u64) -> Result<Self> {
        let (inp, out) = match task {
            ProbeTask::Presence | ProbeTask::Reachability => (dim, categories),
            ProbeTask::Localization if dim.is_multiple_of(9) => (dim / 9, categories),
            ProbeTask::Localization => {
                return Err(Error::Config(format!("localization needs C x 3 x 3 features, got {dim} values")))
            }
            ProbeTask::FreeSpace => (dim, FREE_SPACE_CLASSES),
        };
        let mut params = ParamStore::new();
        let mut rng = SeedStream::new(seed).child("probe").child(task.name()).rng();
        let layer = Linear::new(&mut params, "probe", inp, out, &mut rng);
        Ok(ProbeModel { task, params, layer, categories })
    }

    pub fn input_dim(&self) -> usize {
        match self.task {
            ProbeTask::Localization => self.layer.inp * 9,
            _ => self.layer.inp,
        }
    }

    /// Logits: K, 9K (cell-major), 11 or K values.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        match self.task {
            ProbeTask::Localization => {
                let c = self.layer.inp;
                (0..9)
                    .flat_map(|cell| {
                        let xc: Vec<f64> = (0..c).map(|ch| x[ch * 9 + cell]).collect();
                        self.layer.forward(&self.params, &xc)
                    })
                    .collect()
            }
            _ => self.layer.forward(&self.params, x),
        }
    }

    /// Sigmoid probabilities for multi-label tasks, softmax for free space.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let z = self.logits(x);
        match self.task {
            ProbeTask::FreeSpace => softmax(&z),
            _ => z.into_iter().map(sigmoid).collect(),
        }
    }

    pub fn save(&self, dir: &Path, summary: &ProbeTrainSummary) -> Result<()> {
        let meta = serde_json::json!({
            "task": self.task,
            "dim": self.input_dim(),
            "categories": self.categories,
            "summary": summary,
        });
        write_params(dir, &self.params, meta)
    }

    pub fn load(dir: &Path) -> Result<(Self, ProbeTrainSummary)> {
        let (ps, meta) = read_params(dir)?;
        let task: ProbeTask = serde_json::from_value(meta["task"].clone())?;
        let dim: usize = serde_json::from_value(meta["dim"].clone())?;
        let categories: usize = serde_json::from_value(meta["categories"].clone())?;
        let summary = serde_json::from_value(meta["summary"].clone())?;
        let mut model = ProbeModel::new(task, dim, categories, 0)?;
        model.params.copy_from(&ps)?;
        Ok((model, summary))
    }

    fn backward(&self, x: &[f64], dz: &[f64], grads: &mut crate::nn::Grads) {
        match self.task {
            ProbeTask::Localization => {
                let (c, k) = (self.layer.inp, self.layer.out);
                for cell in 0..9 {
                    let xc: Vec<f64> = (0..c).map(|ch| x[ch * 9 + cell]).collect();
                    self.layer.backward(&self.params, &xc, &dz[cell * k..(cell + 1) * k], grads, None);
                }
            }
            _ => self.layer.backward(&self.params, x, dz, grads, None),
        }
    }
}

fn features(ds: &ProbeDataset, i: usize) -> Vec<f64> {
    ds.feature(i).iter().map(|&v| v as f64).collect()
}

/// Binary targets of a record, `None` where the decision is excluded.
fn binary_targets(task: ProbeTask, ds: &ProbeDataset, i: usize) -> Vec<Option<bool>> {
    let r = &ds.records[i];
    match task {
        ProbeTask::Presence => r.labels.presence.iter().map(|&p| Some(p == 1)).collect(),
        ProbeTask::Localization => r.labels.localization.iter().map(|&p| Some(p == 1)).collect(),
        ProbeTask::Reachability => r
            .labels
            .reachability
            .iter()
            .zip(&r.reach_mask)
            .map(|(&x, &m)| (m == 1).then_some(x == Reach::Reachable))
            .collect(),
        ProbeTask::FreeSpace => Vec::new(),
    }
}

fn has_decision(task: ProbeTask, ds: &ProbeDataset, i: usize) -> bool {
    task != ProbeTask::Reachability || ds.records[i].reach_mask.contains(&1)
}

fn check(task: ProbeTask, ds: &ProbeDataset) -> Result<()> {
    if !task.accepts(ds.manifest.pooling) {
        return Err(Error::Config(format!("{} probe cannot use {} features", task.name(), ds.manifest.pooling.name())));
    }
    Ok(())
}

/// Predictions and truths of every decision on a split.
fn decisions(
    ds: &ProbeDataset,
    split: Split,
    task: ProbeTask,
    mut predict: impl FnMut(usize) -> Vec<f64>,
) -> Result<Score> {
    let range = ds.indices(split);
    if range.is_empty() {
        return Err(Error::Empty(format!("{} split", split.name())));
    }
    let mut bin_pred = Vec::new();
    let mut bin_true = Vec::new();
    let mut cls_pred = Vec::new();
    let mut cls_true = Vec::new();
    for i in range {
        if task == ProbeTask::FreeSpace {
            cls_pred.push(argmax(&predict(i)));
            cls_true.push(ds.records[i].labels.free_space as usize);
            continue;
        }
        if !has_decision(task, ds, i) {
            continue;
        }
        let z = predict(i);
        for (j, t) in binary_targets(task, ds, i).into_iter().enumerate() {
            if let Some(t) = t {
                bin_pred.push(z[j] > 0.0);
                bin_true.push(t);
            }
        }
    }
    Ok(Score { bin_pred, bin_true, cls_pred, cls_true })
}

struct Score {
    bin_pred: Vec<bool>,
    bin_true: Vec<bool>,
    cls_pred: Vec<usize>,
    cls_true: Vec<usize>,
}

impl Score {
    fn value(&self, task: ProbeTask) -> Result<f64> {
        match task {
            ProbeTask::Presence | ProbeTask::Localization => micro_f1(&self.bin_pred, &self.bin_true),
            ProbeTask::Reachability => accuracy(&self.bin_pred, &self.bin_true),
            ProbeTask::FreeSpace => accuracy(&self.cls_pred, &self.cls_true),
        }
    }
}

/// Micro-F1 (presence, localization) or accuracy (free space, reachability) on a
/// split. A binary decision is positive when its probability exceeds 0.5.
pub fn eval_probe(model: &ProbeModel, ds: &ProbeDataset, split: Split) -> Result<f64> {
    check(model.task, ds)?;
    if model.input_dim() != ds.manifest.dim {
        return Err(Error::Shape { expected: model.input_dim().to_string(), got: ds.manifest.dim.to_string() });
    }
    decisions(ds, split, model.task, |i| model.logits(&features(ds, i)))?.value(model.task)
}

/// Score of the best feature-independent predictor fit to training-label
/// frequencies: each binary output predicts its majority training label, free
/// space predicts the most common training class.
pub fn chance_score(task: ProbeTask, ds: &ProbeDataset, split: Split) -> Result<f64> {
    check(task, ds)?;
    let train = ds.indices(Split::Train);
    let logits: Vec<f64> = if task == ProbeTask::FreeSpace {
        let mut counts = [0usize; FREE_SPACE_CLASSES];
        for i in train {
            counts[ds.records[i].labels.free_space as usize] += 1;
        }
        let best = counts.iter().enumerate().max_by_key(|&(c, n)| (*n, std::cmp::Reverse(c))).map_or(0, |(c, _)| c);
        (0..FREE_SPACE_CLASSES).map(|c| if c == best { 1.0 } else { 0.0 }).collect()
    } else {
        let width = if task == ProbeTask::Localization { 9 } else { 1 } * ds.manifest.category_count;
        let (mut pos, mut tot) = (vec![0usize; width], vec![0usize; width]);
        for i in train {
            for (j, t) in binary_targets(task, ds, i).into_iter().enumerate() {
                if let Some(t) = t {
                    pos[j] += t as usize;
                    tot[j] += 1;
                }
            }
        }
        pos.iter().zip(&tot).map(|(&p, &n)| if 2 * p > n { 1.0 } else { -1.0 }).collect()
    };
    decisions(ds, split, task, |_| logits.clone())?.value(task)
}

/// Per-record loss terms: summed loss, logit gradients of that sum, decision count.
fn record_terms(model: &ProbeModel, ds: &ProbeDataset, i: usize) -> (Vec<f64>, f64, Vec<f64>, usize) {
    let x = features(ds, i);
    let z = model.logits(&x);
    if model.task == ProbeTask::FreeSpace {
        let p = softmax(&z);
        let y = ds.records[i].labels.free_space as usize;
        let dz = p.iter().enumerate().map(|(c, &pc)| pc - (c == y) as u8 as f64).collect();
        return (x, -p[y].max(1e-300).ln(), dz, 1);
    }
    let (mut loss, mut count) = (0.0, 0);
    let dz = binary_targets(model.task, ds, i)
        .iter()
        .zip(&z)
        .map(|(t, &zj)| {
            t.map_or(0.0, |t| {
                let y = t as u8 as f64;
                // Stable BCE with logits.
                loss += zj.max(0.0) - zj * y + (-zj.abs()).exp().ln_1p();
                count += 1;
                sigmoid(zj) - y
            })
        })
        .collect();
    (x, loss, dz, count)
}

/// Mean loss per decision on a split.
pub fn probe_loss(model: &ProbeModel, ds: &ProbeDataset, split: Split) -> Result<f64> {
    check(model.task, ds)?;
    let (mut loss, mut count) = (0.0, 0);
    for i in ds.indices(split) {
        let (_, l, _, n) = record_terms(model, ds, i);
        loss += l;
        count += n;
    }
    if count == 0 {
        return Err(Error::Empty(format!("no {} decisions in {}", model.task.name(), split.name())));
    }
    Ok(loss / count as f64)
}

/// Fit a probe with Adam and minibatches, keeping the parameters with the lowest
/// validation loss and stopping once it plateaus. Features are only read.
pub fn train_probe(
    task: ProbeTask,
    ds: &ProbeDataset,
    cfg: &ProbeTrainConfig,
) -> Result<(ProbeModel, ProbeTrainSummary)> {
    check(task, ds)?;
    if cfg.batch_size == 0 || cfg.max_epochs == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("probe batch size, epochs and lr must be positive".into()));
    }
    let mut model = ProbeModel::new(task, ds.manifest.dim, ds.manifest.category_count, cfg.seed)?;
    let mut opt = Adam::new(&model.params, cfg.lr);
    let mut train: Vec<usize> = ds.indices(Split::Train).filter(|&i| has_decision(task, ds, i)).collect();
    if train.is_empty() {
        return Err(Error::Empty(format!("no {} training decisions", task.name())));
    }
    let mut rng = SeedStream::new(cfg.seed).child("probe-batches").child(task.name()).rng();
    let mut best = (probe_loss(&model, ds, Split::Val)?, 0usize, model.params.clone());
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        train.shuffle(&mut rng);
        for batch in train.chunks(cfg.batch_size) {
            let mut grads = model.params.zeros_like();
            let terms: Vec<_> = batch.iter().map(|&i| record_terms(&model, ds, i)).collect();
            let inv = 1.0 / terms.iter().map(|t| t.3).sum::<usize>().max(1) as f64;
            for (x, _, dz, _) in &terms {
                let dz: Vec<f64> = dz.iter().map(|d| d * inv).collect();
                model.backward(x, &dz, &mut grads);
            }
            opt.step(&mut model.params, &grads);
        }
        let val = probe_loss(&model, ds, Split::Val)?;
        if val < best.0 {
            best = (val, epoch, model.params.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    model.params = best.2;
    let best_val = eval_probe(&model, ds, Split::Val)?;
    Ok((model, ProbeTrainSummary { epochs, best_epoch: best.1, best_loss: best.0, best_val }))
}
