pub mod demo;
pub mod eval;
pub mod probe;
pub mod sweep;
pub mod train;
pub mod zeroshot;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use embnav::agents::Agent;
use embnav::encoders::{Backbone, BackboneSpec};
use embnav::metrics::EpisodeRecord;
use embnav::sim::task::Episode;
use embnav::sim::SimConfig;
use embnav::training::{evaluate, Controller, EpisodeSource, Perception, SeedRange};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Worker threads: the available parallelism, capped by `EMBNAV_THREADS`.
pub fn threads() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var("EMBNAV_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    cap.map_or(avail, |c| c.min(avail)).max(1)
}

pub fn backbone(spec: &BackboneSpec) -> CliResult<Arc<Backbone>> {
    Ok(Arc::new(Backbone::new(spec)?))
}

pub fn perception(cfg: &ExperimentConfig, bb: Arc<Backbone>, agent: &embnav::AgentConfig) -> CliResult<Perception> {
    Ok(Perception::new(bb, agent, cfg.task.sim.category_count)?)
}

pub fn source(sim: &SimConfig, seeds: SeedRange) -> EpisodeSource {
    EpisodeSource { config: sim.clone(), seeds }
}

pub fn episodes(sim: &SimConfig, seeds: SeedRange, n: usize) -> CliResult<Vec<Episode>> {
    Ok(source(sim, seeds).episodes(n)?)
}

pub fn records(ctrl: &mut dyn Controller, eps: &[Episode]) -> CliResult<Vec<EpisodeRecord>> {
    Ok(evaluate(ctrl, eps)?.into_iter().map(|o| o.record).collect())
}

pub fn fresh_agent(cfg: &ExperimentConfig, model: &embnav::AgentConfig) -> CliResult<Agent> {
    Ok(Agent::new(model, cfg.seed)?)
}

/// Create `path` and hand a buffered writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(BufWriter<File>) -> embnav::Result<()>) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    f(BufWriter::new(File::create(path)?))?;
    Ok(())
}

/// Map a missing upstream file to an error naming the stage that makes it.
pub fn upstream<T>(r: embnav::Result<T>, stage: &str) -> CliResult<T> {
    r.map_err(|e| match e {
        embnav::Error::MissingArtifact(path) => CliError::missing(path, format!("run `{stage}` first")),
        other => other.into(),
    })
}
