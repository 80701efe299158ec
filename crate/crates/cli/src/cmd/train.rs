use std::path::Path;

use embnav::agents::ActMode;
use embnav::metrics::{write_metrics_csv, MetricReport};
use embnav::training::{AgentController, BestScore, RandomController, Trainer};

use super::{backbone, episodes, fresh_agent, perception, records, source, threads, write_file};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::lock::DirLock;

#[derive(Debug, Clone, Default)]
pub struct TrainOpts {
    pub resume: bool,
    /// Stop (with a checkpoint) after this many updates in this invocation.
    pub max_updates: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub finished: bool,
    pub steps: u64,
    pub best: Option<BestScore>,
}

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const AGENT_DIR: &str = "agent";
pub const LOG_CSV: &str = "train_log.csv";
pub const METRICS_CSV: &str = "metrics.csv";

/// Build a trainer for `cfg`, fresh or resumed from `ckpt`.
pub fn trainer(cfg: &ExperimentConfig, ckpt: &Path, resume: bool) -> CliResult<Trainer> {
    let a = cfg.agent_block()?;
    let tc = cfg.train_config()?;
    let p = perception(cfg, backbone(&a.backbone)?, &a.model)?;
    let seeds = &cfg.task.seeds;
    let train = source(&cfg.task.sim, seeds.train);
    let val = episodes(&cfg.task.sim, seeds.val, tc.val_episodes.min(seeds.val.count as usize))?;
    let mut t = if resume {
        if !Trainer::has_checkpoint(ckpt) {
            return Err(CliError::missing(
                ckpt.join("trainer.json"),
                "nothing to resume; run `embnav train` without --resume",
            ));
        }
        Trainer::resume(ckpt, &tc, p, train, val)?
    } else {
        if Trainer::has_checkpoint(ckpt) {
            return Err(CliError::Config(format!(
                "{} already holds a training run; pass --resume or choose another --out",
                ckpt.display()
            )));
        }
        Trainer::new(tc, fresh_agent(cfg, &a.model)?, p, train, val)?
    };
    t.threads = threads();
    Ok(t)
}

/// Argmax agent and uniform-random rows on the test split.
pub fn final_reports(cfg: &ExperimentConfig, t: &Trainer, n: usize) -> CliResult<Vec<MetricReport>> {
    let eps = episodes(&cfg.task.sim, cfg.task.seeds.test, n)?;
    let best = t.best_agent();
    let mut agent = AgentController::new("agent", &best, &t.perception, ActMode::Argmax, cfg.seed);
    let mut random = RandomController::new(cfg.seed);
    let kind = cfg.task_kind();
    Ok(vec![
        MetricReport::from_records(kind, "agent", "test", &records(&mut agent, &eps)?)?,
        MetricReport::from_records(kind, "random", "test", &records(&mut random, &eps)?)?,
    ])
}

pub fn run(cfg: &ExperimentConfig, out: &Path, opts: &TrainOpts) -> CliResult<TrainOutcome> {
    let _lock = DirLock::acquire(out)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let mut t = trainer(cfg, &ckpt, opts.resume)?;
    let frozen = t.perception.backbone.param_hash();
    let mut done = 0;
    while !t.finished() && opts.max_updates.is_none_or(|m| done < m) {
        let row = t.iterate()?;
        done += 1;
        if let (Some(sr), Some(spl)) = (row.sr_val, row.spl_val) {
            eprintln!("step {:>9}  sr_val {sr:.3}  spl_val {spl:.3}", row.step);
        }
        if t.updates % cfg.checkpoint_every == 0 {
            t.save(&ckpt)?;
        }
    }
    t.save(&ckpt)?;
    if t.perception.backbone.param_hash() != frozen {
        return Err(CliError::Runtime("backbone parameters changed during training".into()));
    }
    write_file(&out.join(LOG_CSV), |w| t.write_log_csv(w))?;
    let finished = t.finished();
    if finished {
        t.best_agent().save(&out.join(AGENT_DIR), t.steps)?;
        let reports = final_reports(cfg, &t, cfg.eval_episodes(None)?)?;
        write_file(&out.join(METRICS_CSV), |w| write_metrics_csv(w, &reports))?;
    } else {
        eprintln!("paused at step {}; continue with --resume", t.steps);
    }
    Ok(TrainOutcome { finished, steps: t.steps, best: t.best.clone() })
}
