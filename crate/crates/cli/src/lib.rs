//! Command-line front end: config files, output directories and the
//! subcommands that drive training, evaluation, probing and the sweeps.

pub mod cmd;
pub mod config;
pub mod error;
pub mod lock;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::cmd::eval::Policy;
use crate::cmd::probe::Stage;
use crate::cmd::train::TrainOpts;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "embnav", version, about = "Frozen visual encoders for embodied navigation and rearrangement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent on the train seeds, validating on the val seeds.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many updates (the run can be resumed).
        #[arg(long)]
        max_updates: Option<u64>,
    },
    /// Evaluate a saved agent, `expert` or `random` on the test seeds.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Agent directory, `expert` or `random`.
        #[arg(long, default_value = "expert")]
        checkpoint: Policy,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Linear probes on frozen features.
    Probe {
        /// data, train, eval, report or all.
        stage: Stage,
        #[command(flatten)]
        common: Common,
    },
    /// Proxy accuracy against navigation success across backbones.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Train on seen goal categories, test on unseen ones.
    Zeroshot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Run the expert on a few test episodes and save logs and start frames.
    SimDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Probe { common, .. }
            | Command::Sweep { common, .. }
            | Command::Zeroshot { common, .. }
            | Command::SimDemo { common, .. } => common,
        }
    }
}

/// Load the config, apply command-line overrides and pick the output directory.
pub fn resolve(common: &Common) -> CliResult<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set `out` in the config".into()))?;
    Ok((cfg, out))
}

pub fn run(cli: Cli) -> CliResult<()> {
    let (cfg, out) = resolve(cli.command.common())?;
    match cli.command {
        Command::Train { resume, max_updates, .. } => {
            let o = cmd::train::run(&cfg, &out, &TrainOpts { resume, max_updates })?;
            if let Some(b) = o.best {
                eprintln!("best val sr {:.3} spl {:.3} at step {}", b.sr, b.spl, b.step);
            }
        }
        Command::Eval { checkpoint, episodes, .. } => {
            let r = cmd::eval::run(&cfg, &out, &checkpoint, episodes)?;
            eprintln!("{} episodes, sr {:?}", r.episodes, r.sr);
        }
        Command::Probe { stage, .. } => cmd::probe::run(&cfg, &out, stage)?,
        Command::Sweep { resume, .. } => {
            cmd::sweep::run(&cfg, &out, resume)?;
        }
        Command::Zeroshot { resume, .. } => {
            let o = cmd::zeroshot::run(&cfg, &out, resume)?;
            for split in ["seen", "unseen"] {
                eprintln!(
                    "{split}: agent sr {:.3}, random sr {:.3}",
                    o.sr("agent", split).unwrap_or(f64::NAN),
                    o.sr("random", split).unwrap_or(f64::NAN)
                );
            }
        }
        Command::SimDemo { episodes, .. } => {
            cmd::demo::run(&cfg, &out, episodes)?;
        }
    }
    Ok(())
}
