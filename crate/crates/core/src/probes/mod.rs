//! Linear probes for visual primitives: dataset generation from random views,
//! single-layer probe training and F1/accuracy evaluation.

mod dataset;
mod model;

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::csv_err;

pub use dataset::{generate_probe_dataset, ProbeDataConfig, ProbeDataset, ProbeManifest, ProbeRecord, SplitRanges};
pub use model::{chance_score, eval_probe, probe_loss, train_probe, ProbeModel, ProbeTrainConfig, ProbeTrainSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTask {
    Presence,
    Localization,
    FreeSpace,
    Reachability,
}

impl ProbeTask {
    pub const ALL: [ProbeTask; 4] =
        [ProbeTask::Presence, ProbeTask::Localization, ProbeTask::FreeSpace, ProbeTask::Reachability];

    pub fn name(self) -> &'static str {
        match self {
            ProbeTask::Presence => "presence",
            ProbeTask::Localization => "localization",
            ProbeTask::FreeSpace => "free_space",
            ProbeTask::Reachability => "reachability",
        }
    }

    pub fn metric(self) -> Metric {
        match self {
            ProbeTask::Presence | ProbeTask::Localization => Metric::MicroF1,
            ProbeTask::FreeSpace | ProbeTask::Reachability => Metric::Accuracy,
        }
    }

    /// The pooling a task's features must come from.
    pub fn accepts(self, pooling: Pooling) -> bool {
        match self {
            ProbeTask::Localization => pooling == Pooling::Grid,
            _ => pooling != Pooling::Grid,
        }
    }
}

impl FromStr for ProbeTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbeTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown probe task {s:?}")))
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pooling::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| Error::Format(format!("unknown pooling {s:?}")))
    }
}

/// How a C x S x S feature map becomes a probe input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pooling {
    /// Spatial mean, a C-vector.
    #[serde(rename = "avg")]
    Average,
    /// Area-weighted average to a 3 x 3 grid, C x 9 channel-major.
    #[serde(rename = "avg3x3")]
    Grid,
    /// The backbone's attention pool.
    #[serde(rename = "attn")]
    Attention,
}

impl Pooling {
    pub const ALL: [Pooling; 3] = [Pooling::Average, Pooling::Grid, Pooling::Attention];

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Average => "avg",
            Pooling::Grid => "avg3x3",
            Pooling::Attention => "attn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MicroF1,
    Accuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::MicroF1 => "f1_micro",
            Metric::Accuracy => "accuracy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Micro-averaged F1 over binary decisions: 2TP / (2TP + FP + FN).
/// With no positives predicted or present there is nothing to get wrong and the score is 1.
pub fn micro_f1(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape { expected: truth.len().to_string(), got: pred.len().to_string() });
    }
    if pred.is_empty() {
        return Err(Error::Empty("F1 over zero decisions".into()));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    Ok(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 })
}

pub fn accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape { expected: truth.len().to_string(), got: pred.len().to_string() });
    }
    if pred.is_empty() {
        return Err(Error::Empty("accuracy over zero decisions".into()));
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReportRow {
    pub task: ProbeTask,
    /// Backbone id.
    pub pretraining: String,
    pub pooling: Pooling,
    pub score: f64,
}

pub const PROBE_REPORT_HEADER: [&str; 5] = ["task", "pretraining", "pooling", "metric", "score"];

pub fn write_probe_report<W: Write>(out: W, rows: &[ProbeReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROBE_REPORT_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.task.name(),
            &r.pretraining,
            r.pooling.name(),
            r.task.metric().name(),
            &format!("{:.6}", r.score),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
