use std::collections::BTreeMap;
use std::path::Path;

use embnav::agents::ActMode;
use embnav::metrics::success_rate;
use embnav::sim::task::Episode;
use embnav::sim::TaskConfig;
use embnav::training::{AgentController, Controller, RandomController, Trainer};
use serde::Serialize;

use super::train::{trainer, AGENT_DIR, CHECKPOINT_DIR, LOG_CSV};
use super::{episodes, records, write_file};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::lock::DirLock;

pub const ZEROSHOT_CSV: &str = "zeroshot.csv";
pub const AUDIT_JSON: &str = "audit.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroShotRow {
    pub policy: String,
    pub split: String,
    /// A category id, or `all`.
    pub category: String,
    pub episodes: usize,
    pub sr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Audit {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    /// Goal categories of every finished training episode.
    pub trained_goals: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotOutcome {
    pub rows: Vec<ZeroShotRow>,
    pub audit: Audit,
}

impl ZeroShotOutcome {
    pub fn sr(&self, policy: &str, split: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.policy == policy && r.split == split && r.category == "all").map(|r| r.sr)
    }
}

/// The experiment config restricted to goals drawn from `goals`.
pub fn with_goals(cfg: &ExperimentConfig, goals: &[usize]) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.task.sim.task = TaskConfig::ObjectNav { goal_categories: Some(goals.to_vec()) };
    c
}

fn split_rows(policy: &str, split: &str, ctrl: &mut dyn Controller, eps: &[Episode]) -> CliResult<Vec<ZeroShotRow>> {
    let recs = records(ctrl, eps)?;
    let mut by_cat: BTreeMap<usize, Vec<_>> = BTreeMap::new();
    for (ep, r) in eps.iter().zip(&recs) {
        let c = ep.task.goal_category.expect("ObjectNav episodes have a goal category");
        by_cat.entry(c).or_default().push(r.clone());
    }
    let row = |category: String, rs: &[_]| -> CliResult<ZeroShotRow> {
        Ok(ZeroShotRow {
            policy: policy.into(),
            split: split.into(),
            category,
            episodes: rs.len(),
            sr: success_rate(rs)?,
        })
    };
    let mut rows = vec![row("all".into(), &recs)?];
    for (c, rs) in &by_cat {
        rows.push(row(c.to_string(), rs)?);
    }
    Ok(rows)
}

fn write_rows(path: &Path, rows: &[ZeroShotRow]) -> CliResult<()> {
    write_file(path, |w| {
        let mut w = csv::Writer::from_writer(w);
        let err = |e: csv::Error| embnav::Error::Format(e.to_string());
        w.write_record(["policy", "split", "category", "episodes", "sr"]).map_err(err)?;
        for r in rows {
            w.write_record([
                r.policy.clone(),
                r.split.clone(),
                r.category.clone(),
                r.episodes.to_string(),
                format!("{:.6}", r.sr),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    })
}

pub fn run(cfg: &ExperimentConfig, out: &Path, resume: bool) -> CliResult<ZeroShotOutcome> {
    let _lock = DirLock::acquire(out)?;
    let z = cfg.zeroshot.clone().ok_or_else(|| CliError::Config("missing [zeroshot] block".into()))?;
    let train_cfg = with_goals(cfg, &z.seen);
    let ckpt = out.join(CHECKPOINT_DIR);
    let mut t: Trainer = trainer(&train_cfg, &ckpt, resume)?;
    while !t.finished() {
        let row = t.iterate()?;
        if let Some(sr) = row.sr_val {
            eprintln!("step {:>9}  sr_val(seen) {sr:.3}", row.step);
        }
        if t.updates.is_multiple_of(cfg.checkpoint_every) {
            t.save(&ckpt)?;
        }
    }
    t.save(&ckpt)?;
    let audit = Audit {
        seen: z.seen.clone(),
        unseen: z.unseen.clone(),
        trained_goals: t.trained_goals.iter().copied().collect(),
    };
    std::fs::write(out.join(AUDIT_JSON), serde_json::to_vec_pretty(&audit)?)?;
    if let Some(c) = audit.trained_goals.iter().find(|c| !z.seen.contains(c)) {
        return Err(CliError::Runtime(format!("training reached unseen goal category {c}")));
    }
    write_file(&out.join(LOG_CSV), |w| t.write_log_csv(w))?;
    let best = t.best_agent();
    best.save(&out.join(AGENT_DIR), t.steps)?;

    let mut rows = Vec::new();
    for (split, goals) in [("seen", &z.seen), ("unseen", &z.unseen)] {
        let c = with_goals(cfg, goals);
        let eps = episodes(&c.task.sim, c.task.seeds.test, z.episodes)?;
        let mut agent = AgentController::new("agent", &best, &t.perception, ActMode::Argmax, cfg.seed);
        rows.extend(split_rows("agent", split, &mut agent, &eps)?);
        rows.extend(split_rows("random", split, &mut RandomController::new(cfg.seed), &eps)?);
    }
    write_rows(&out.join(ZEROSHOT_CSV), &rows)?;
    Ok(ZeroShotOutcome { rows, audit })
}
