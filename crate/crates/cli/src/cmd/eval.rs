use std::path::{Path, PathBuf};
use std::str::FromStr;

use embnav::agents::{ActMode, Agent};
use embnav::metrics::{write_metrics_csv, MetricReport};
use embnav::training::{AgentController, Controller, ExpertController, RandomController};

use super::{backbone, episodes, perception, records, upstream, write_file};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::lock::DirLock;

pub const EVAL_CSV: &str = "eval.csv";

/// What to evaluate: a saved agent directory or a built-in policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Policy {
    Checkpoint(PathBuf),
    Expert,
    Random,
}

impl FromStr for Policy {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "expert" => Policy::Expert,
            "random" => Policy::Random,
            dir => Policy::Checkpoint(dir.into()),
        })
    }
}

pub fn report(cfg: &ExperimentConfig, policy: &Policy, n: usize) -> CliResult<MetricReport> {
    let eps = episodes(&cfg.task.sim, cfg.task.seeds.test, n)?;
    let kind = cfg.task_kind();
    let recs = match policy {
        Policy::Expert => records(&mut ExpertController, &eps)?,
        Policy::Random => records(&mut RandomController::new(cfg.seed), &eps)?,
        Policy::Checkpoint(dir) => {
            let a = cfg.agent_block()?;
            let (agent, _) = upstream(Agent::load_expecting(dir, a.model.arch, a.model.actions), "embnav train")?;
            if agent.config != a.model {
                return Err(CliError::Config(format!(
                    "{} was trained with a different agent configuration",
                    dir.display()
                )));
            }
            let p = perception(cfg, backbone(&a.backbone)?, &a.model)?;
            let mut ctrl = AgentController::new("agent", &agent, &p, ActMode::Argmax, cfg.seed);
            records(&mut ctrl as &mut dyn Controller, &eps)?
        }
    };
    let name = match policy {
        Policy::Expert => "expert",
        Policy::Random => "random",
        Policy::Checkpoint(_) => "agent",
    };
    Ok(MetricReport::from_records(kind, name, "test", &recs)?)
}

pub fn run(cfg: &ExperimentConfig, out: &Path, policy: &Policy, episodes: Option<usize>) -> CliResult<MetricReport> {
    let _lock = DirLock::acquire(out)?;
    let r = report(cfg, policy, cfg.eval_episodes(episodes)?)?;
    write_file(&out.join(EVAL_CSV), |w| write_metrics_csv(w, std::slice::from_ref(&r)))?;
    Ok(r)
}
