use std::path::Path;

use embnav::sim::episode::write_jsonl;
use embnav::sim::{EpisodeLog, SimState};
use embnav::training::{run_episode, ExpertController};

use super::{episodes, write_file};
use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::lock::DirLock;

pub const DEMO_DIR: &str = "demo";
pub const EPISODES_JSONL: &str = "episodes.jsonl";

/// Run the expert on the first `n` test episodes; write their logs and start frames.
pub fn run(cfg: &ExperimentConfig, out: &Path, n: Option<usize>) -> CliResult<Vec<EpisodeLog>> {
    let _lock = DirLock::acquire(out)?;
    let dir = out.join(DEMO_DIR);
    std::fs::create_dir_all(&dir)?;
    let n = cfg.eval_episodes(Some(n.unwrap_or(3)))?;
    let mut logs = Vec::new();
    for (i, ep) in episodes(&cfg.task.sim, cfg.task.seeds.test, n)?.iter().enumerate() {
        let start = SimState::new(ep)?.observe();
        std::fs::write(dir.join(format!("episode_{i}.ppm")), start.frame.image.to_ppm())?;
        let o = run_episode(&mut ExpertController, ep)?;
        eprintln!("episode {i}: seed {} success {} steps {}", ep.seed, o.log.success, o.log.actions.len());
        logs.push(o.log);
    }
    write_file(&dir.join(EPISODES_JSONL), |w| write_jsonl(w, &logs))?;
    Ok(logs)
}
