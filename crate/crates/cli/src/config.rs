//! Experiment configuration files (TOML).
//!
//! One root `seed` drives everything: agent initialization, rollout workers,
//! validation, probe scene sampling and probe minibatches all derive their
//! streams from it, so `seed` fields inside the nested blocks are ignored.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use embnav::agents::{AgentConfig, Architecture};
use embnav::encoders::BackboneSpec;
use embnav::probes::{Pooling, ProbeDataConfig, ProbeTask, ProbeTrainConfig};
use embnav::sim::task::ActionSpace;
use embnav::sim::{SimConfig, TaskConfig, TaskKind};
use embnav::training::{check_task, SeedRange, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

fn d_checkpoint_every() -> u64 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Save a training checkpoint every this many updates.
    #[serde(default = "d_checkpoint_every")]
    pub checkpoint_every: u64,
    pub task: TaskBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub eval: EvalBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeroshot: Option<ZeroShotBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskBlock {
    pub sim: SimConfig,
    pub seeds: SplitSeeds,
}

/// Episode seed blocks; the three must not overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSeeds {
    pub train: SeedRange,
    pub val: SeedRange,
    pub test: SeedRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentBlock {
    /// Must agree with the architecture when given: none for the ObjectNav and
    /// rearrangement fronts (full maps), `avg` for Habitat, `attn` for zero-shot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<Pooling>,
    pub model: AgentConfig,
    pub backbone: BackboneSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBlock {
    /// Test episodes to evaluate; defaults to the whole test seed block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,
}

fn d_tasks() -> Vec<ProbeTask> {
    ProbeTask::ALL.to_vec()
}
fn d_poolings() -> Vec<Pooling> {
    Pooling::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    pub data: ProbeDataConfig,
    pub backbones: Vec<BackboneSpec>,
    #[serde(default = "d_tasks")]
    pub tasks: Vec<ProbeTask>,
    #[serde(default = "d_poolings")]
    pub poolings: Vec<Pooling>,
    pub train: ProbeTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub backbones: Vec<BackboneSpec>,
    /// Frames for the proxy classification accuracy of each backbone.
    pub proxy: ProbeDataConfig,
    pub proxy_train: ProbeTrainConfig,
}

fn d_seen() -> Vec<usize> {
    (0..8).collect()
}
fn d_unseen() -> Vec<usize> {
    (8..12).collect()
}
fn d_zs_episodes() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroShotBlock {
    #[serde(default = "d_seen")]
    pub seen: Vec<usize>,
    #[serde(default = "d_unseen")]
    pub unseen: Vec<usize>,
    /// Test episodes per category set.
    #[serde(default = "d_zs_episodes")]
    pub episodes: usize,
}

impl Default for ZeroShotBlock {
    fn default() -> Self {
        ZeroShotBlock { seen: d_seen(), unseen: d_unseen(), episodes: d_zs_episodes() }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => cfg_err(format!("config file {} not found", path.display())),
            _ => CliError::from(e),
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => cfg_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task.sim.task.kind()
    }

    /// Training hyperparameters with the root seed applied.
    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let mut t = self.train.clone().ok_or_else(|| cfg_err("missing [train] block"))?;
        t.seed = self.seed;
        Ok(t)
    }

    pub fn agent_block(&self) -> CliResult<&AgentBlock> {
        self.agent.as_ref().ok_or_else(|| cfg_err("missing [agent] block"))
    }

    pub fn probe_block(&self) -> CliResult<ProbeBlock> {
        let mut p = self.probe.clone().ok_or_else(|| cfg_err("missing [probe] block"))?;
        p.data.seed = self.seed;
        p.train.seed = self.seed;
        Ok(p)
    }

    pub fn sweep_block(&self) -> CliResult<SweepBlock> {
        let mut s = self.sweep.clone().ok_or_else(|| cfg_err("missing [sweep] block"))?;
        s.proxy.seed = self.seed;
        s.proxy_train.seed = self.seed;
        Ok(s)
    }

    /// Test episodes to run; never more than the test seed block holds.
    pub fn eval_episodes(&self, flag: Option<usize>) -> CliResult<usize> {
        let count = self.task.seeds.test.count as usize;
        let n = flag.or(self.eval.episodes).unwrap_or(count);
        if n > count {
            return Err(cfg_err(format!("{n} test episodes requested but task.seeds.test holds {count}")));
        }
        Ok(n)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(cfg_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        // TOML integers are signed 64-bit.
        if self.seed > i64::MAX as u64 {
            return Err(cfg_err(format!("seed {} does not fit in a TOML integer", self.seed)));
        }
        self.task.sim.validate()?;
        let s = &self.task.seeds;
        let blocks = [("train", s.train), ("val", s.val), ("test", s.test)];
        for (name, r) in blocks {
            if r.count == 0 {
                return Err(cfg_err(format!("task.seeds.{name} is empty")));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                if blocks[i].1.overlaps(&blocks[j].1) {
                    return Err(cfg_err(format!("task.seeds.{} and task.seeds.{} overlap", blocks[i].0, blocks[j].0)));
                }
            }
        }
        if let Some(a) = &self.agent {
            self.validate_agent(a)?;
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        if let Some(n) = self.eval.episodes {
            if n as u64 > s.test.count {
                return Err(cfg_err(format!("eval.episodes {n} exceeds task.seeds.test.count {}", s.test.count)));
            }
        }
        if self.checkpoint_every == 0 {
            return Err(cfg_err("checkpoint_every must be positive"));
        }
        if let Some(p) = &self.probe {
            p.data.validate()?;
            check_backbones(&p.backbones, p.data.sim.image_size, "probe")?;
            if p.tasks.is_empty() || p.poolings.is_empty() {
                return Err(cfg_err("probe.tasks and probe.poolings must be non-empty"));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.backbones.len() < 2 {
                return Err(cfg_err("sweep needs at least two backbones"));
            }
            sw.proxy.validate()?;
            check_backbones(&sw.backbones, sw.proxy.sim.image_size, "sweep")?;
            check_backbones(&sw.backbones, self.task.sim.image_size, "sweep")?;
        }
        if let Some(z) = &self.zeroshot {
            let k = self.task.sim.category_count;
            let seen: BTreeSet<_> = z.seen.iter().collect();
            if z.seen.is_empty() || z.unseen.is_empty() {
                return Err(cfg_err("zeroshot.seen and zeroshot.unseen must be non-empty"));
            }
            if let Some(c) = z.unseen.iter().find(|c| seen.contains(c)) {
                return Err(cfg_err(format!("category {c} is listed as both seen and unseen")));
            }
            if let Some(c) = z.seen.iter().chain(&z.unseen).find(|&&c| c >= k) {
                return Err(cfg_err(format!("zero-shot category {c} is outside 0..{k}")));
            }
            if !matches!(self.task.sim.task, TaskConfig::ObjectNav { .. }) {
                return Err(cfg_err("zero-shot runs ObjectNav episodes"));
            }
            if z.episodes == 0 || z.episodes as u64 > s.test.count {
                return Err(cfg_err(format!(
                    "zeroshot.episodes must be in 1..={} (the test seed block)",
                    s.test.count
                )));
            }
        }
        Ok(())
    }

    fn validate_agent(&self, a: &AgentBlock) -> CliResult<()> {
        let m = &a.model;
        m.validate()?;
        check_task(m, self.task_kind())?;
        check_backbones(std::slice::from_ref(&a.backbone), self.task.sim.image_size, "agent")?;
        let k = self.task.sim.category_count;
        let actions = ActionSpace::for_task(self.task_kind(), k).len();
        if m.actions != actions {
            return Err(cfg_err(format!("agent.model.actions is {} but the task has {actions} actions", m.actions)));
        }
        let expected_pooling = match m.arch {
            Architecture::ObjectNav | Architecture::Rearrange => None,
            Architecture::Habitat => Some(Pooling::Average),
            Architecture::ZeroShot => Some(Pooling::Attention),
        };
        if a.pooling.is_some() && a.pooling != expected_pooling {
            return Err(cfg_err(format!("{:?} agents cannot use {:?} pooling", m.arch, a.pooling)));
        }
        let b = &a.backbone;
        if m.arch == Architecture::ZeroShot {
            if b.attention.is_none() {
                return Err(cfg_err("zero-shot agents need a backbone with attention-pool weights"));
            }
        } else if (m.channels, m.spatial) != (b.channels, b.spatial) {
            return Err(cfg_err(format!(
                "agent.model expects {}x{} features but backbone {} gives {}x{}",
                m.channels, m.spatial, b.id, b.channels, b.spatial
            )));
        }
        let category_goals = matches!(m.arch, Architecture::ObjectNav)
            || (m.arch == Architecture::Habitat && self.task_kind() == TaskKind::ObjectNav);
        if category_goals && m.goal_count < k {
            return Err(cfg_err(format!("agent.model.goal_count {} is below category_count {k}", m.goal_count)));
        }
        Ok(())
    }
}

fn check_backbones(specs: &[BackboneSpec], image_size: usize, block: &str) -> CliResult<()> {
    let mut ids = BTreeSet::new();
    for b in specs {
        if !ids.insert(&b.id) && block == "probe" {
            return Err(cfg_err(format!("{block}: backbone id {} is listed twice", b.id)));
        }
        if b.image_size != image_size {
            return Err(cfg_err(format!(
                "{block}: backbone {} expects {} px images but the simulator renders {image_size} px",
                b.id, b.image_size
            )));
        }
        if !b.frozen {
            return Err(cfg_err(format!("{block}: backbone {} must be frozen", b.id)));
        }
    }
    if specs.is_empty() {
        return Err(cfg_err(format!("{block}: no backbones listed")));
    }
    Ok(())
}
