use std::path::{Path, PathBuf};
use std::str::FromStr;

use embnav::encoders::BackboneSpec;
use embnav::probes::{
    chance_score, eval_probe, generate_probe_dataset, train_probe, write_probe_report, Pooling, ProbeDataset,
    ProbeModel, ProbeReportRow, ProbeTask, Split,
};
use serde::{Deserialize, Serialize};

use super::{backbone, threads, upstream, write_file};
use crate::config::{ExperimentConfig, ProbeBlock};
use crate::error::{CliError, CliResult};
use crate::lock::DirLock;

pub const SCORES_CSV: &str = "scores.csv";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Train,
    Eval,
    Report,
    All,
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "data" => Ok(Stage::Data),
            "train" => Ok(Stage::Train),
            "eval" => Ok(Stage::Eval),
            "report" => Ok(Stage::Report),
            "all" => Ok(Stage::All),
            _ => Err(format!("unknown probe stage {s:?}")),
        }
    }
}

/// One probe: a task read from one backbone through one pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub task: ProbeTask,
    pub backbone: BackboneSpec,
    pub pooling: Pooling,
}

/// Tasks x backbones x poolings, keeping poolings the task accepts and
/// attention pooling only for backbones that have attention weights.
pub fn cells(p: &ProbeBlock) -> Vec<Cell> {
    let mut out = Vec::new();
    for &task in &p.tasks {
        for b in &p.backbones {
            for &pooling in &p.poolings {
                if task.accepts(pooling) && (pooling != Pooling::Attention || b.attention.is_some()) {
                    out.push(Cell { task, backbone: b.clone(), pooling });
                }
            }
        }
    }
    out
}

pub fn data_dir(out: &Path, b: &BackboneSpec, pooling: Pooling) -> PathBuf {
    out.join("probe").join("data").join(format!("{}-{}", b.id, pooling.name()))
}

pub fn model_dir(out: &Path, c: &Cell) -> PathBuf {
    out.join("probe").join("models").join(format!("{}-{}-{}", c.task.name(), c.backbone.id, c.pooling.name()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub task: String,
    pub pretraining: String,
    pub pooling: String,
    pub metric: String,
    pub val: f64,
    pub test: f64,
    pub chance: f64,
}

fn load_dataset(p: &ProbeBlock, dir: &Path) -> CliResult<ProbeDataset> {
    let ds = upstream(ProbeDataset::read(dir), "embnav probe data")?;
    if ds.manifest.config != p.data {
        return Err(CliError::Config(format!(
            "{} was generated with a different [probe.data] block; rerun `embnav probe data`",
            dir.display()
        )));
    }
    Ok(ds)
}

pub fn data(cfg: &ExperimentConfig, out: &Path) -> CliResult<usize> {
    let p = cfg.probe_block()?;
    let mut done: Vec<(String, Pooling)> = Vec::new();
    for c in cells(&p) {
        let key = (c.backbone.id.clone(), c.pooling);
        if done.contains(&key) {
            continue;
        }
        let bb = backbone(&c.backbone)?;
        let ds = generate_probe_dataset(&p.data, &bb, c.pooling, threads())?;
        let dir = data_dir(out, &c.backbone, c.pooling);
        std::fs::create_dir_all(&dir)?;
        ds.write(&dir)?;
        eprintln!("wrote {} ({} records)", dir.display(), ds.manifest.records);
        done.push(key);
    }
    Ok(done.len())
}

pub fn train(cfg: &ExperimentConfig, out: &Path) -> CliResult<usize> {
    let p = cfg.probe_block()?;
    let cs = cells(&p);
    for c in &cs {
        let ds = load_dataset(&p, &data_dir(out, &c.backbone, c.pooling))?;
        let (model, summary) = train_probe(c.task, &ds, &p.train)?;
        let dir = model_dir(out, c);
        std::fs::create_dir_all(&dir)?;
        model.save(&dir, &summary)?;
        eprintln!("{}: {} epochs, val {:.4}", dir.display(), summary.epochs, summary.best_val);
    }
    Ok(cs.len())
}

pub fn eval(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<ScoreRow>> {
    let p = cfg.probe_block()?;
    let mut rows = Vec::new();
    for c in cells(&p) {
        let ds = load_dataset(&p, &data_dir(out, &c.backbone, c.pooling))?;
        let (model, _) = upstream(ProbeModel::load(&model_dir(out, &c)), "embnav probe train")?;
        if model.task != c.task {
            return Err(CliError::Runtime(format!(
                "{} holds a {} probe",
                model_dir(out, &c).display(),
                model.task.name()
            )));
        }
        rows.push(ScoreRow {
            task: c.task.name().into(),
            pretraining: c.backbone.id.clone(),
            pooling: c.pooling.name().into(),
            metric: c.task.metric().name().into(),
            val: eval_probe(&model, &ds, Split::Val)?,
            test: eval_probe(&model, &ds, Split::Test)?,
            chance: chance_score(c.task, &ds, Split::Test)?,
        });
    }
    write_file(&out.join("probe").join(SCORES_CSV), |w| {
        let mut w = csv::Writer::from_writer(w);
        for r in &rows {
            w.serialize(RoundedRow::from(r)).map_err(|e| embnav::Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(rows)
}

/// Scores written with fixed precision so reruns are byte-identical across platforms.
#[derive(Serialize)]
struct RoundedRow<'a> {
    task: &'a str,
    pretraining: &'a str,
    pooling: &'a str,
    metric: &'a str,
    val: String,
    test: String,
    chance: String,
}

impl<'a> From<&'a ScoreRow> for RoundedRow<'a> {
    fn from(r: &'a ScoreRow) -> Self {
        RoundedRow {
            task: &r.task,
            pretraining: &r.pretraining,
            pooling: &r.pooling,
            metric: &r.metric,
            val: format!("{:.6}", r.val),
            test: format!("{:.6}", r.test),
            chance: format!("{:.6}", r.chance),
        }
    }
}

pub fn read_scores(out: &Path) -> CliResult<Vec<ScoreRow>> {
    let path = out.join("probe").join(SCORES_CSV);
    if !path.exists() {
        return Err(CliError::missing(path, "run `embnav probe eval` first"));
    }
    let mut r = csv::Reader::from_path(&path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn report(out: &Path) -> CliResult<usize> {
    let rows = read_scores(out)?
        .into_iter()
        .map(|r| {
            Ok(ProbeReportRow {
                task: ProbeTask::from_str(&r.task)?,
                pretraining: r.pretraining,
                pooling: Pooling::from_str(&r.pooling)?,
                score: r.test,
            })
        })
        .collect::<embnav::Result<Vec<_>>>()?;
    write_file(&out.join("probe").join(REPORT_CSV), |w| write_probe_report(w, &rows))?;
    Ok(rows.len())
}

pub fn run(cfg: &ExperimentConfig, out: &Path, stage: Stage) -> CliResult<()> {
    let _lock = DirLock::acquire(out)?;
    match stage {
        Stage::Data => data(cfg, out).map(drop),
        Stage::Train => train(cfg, out).map(drop),
        Stage::Eval => eval(cfg, out).map(drop),
        Stage::Report => report(out).map(drop),
        Stage::All => {
            data(cfg, out)?;
            train(cfg, out)?;
            eval(cfg, out)?;
            report(out).map(drop)
        }
    }
}
