//! Synchronous recurrent PPO and imitation learning over simulator workers.

mod eval;
mod gae;
mod perception;
mod rollout;
mod trainer;
mod update;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eval::{
    evaluate, expert_agreement, run_episode, AgentController, Controller, EpisodeOutcome, ExpertController,
    RandomController,
};
pub use gae::gae_returns;
pub use perception::{check_task, Perception};
pub use rollout::{
    collect_rollout, Behavior, EpisodeEnd, EpisodeSource, RolloutBuffer, StepRecord, Worker, WorkerSeq, WorkerSnapshot,
};
pub use trainer::{write_log_csv, BestScore, LogRow, Trainer, TRAIN_LOG_HEADER};
pub use update::{compute_advantages, imitation_loss, imitation_update, policy_gradients, ppo_update, LossReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Ppo,
    Imitation,
}

/// Contiguous block of episode seeds; index `i` maps to `start + i mod count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: u64,
}

impl SeedRange {
    pub fn new(start: u64, count: u64) -> Self {
        SeedRange { start, count }
    }

    pub fn get(&self, i: u64) -> u64 {
        self.start + i % self.count.max(1)
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> {
        self.start..self.start + self.count
    }

    pub fn overlaps(&self, other: &SeedRange) -> bool {
        self.start < other.start + other.count && other.start < self.start + self.count
    }
}

fn d_lr() -> f64 {
    3e-4
}
fn d_gamma() -> f64 {
    0.99
}
fn d_lambda() -> f64 {
    0.95
}
fn d_clip() -> f64 {
    0.1
}
fn d_epochs() -> usize {
    4
}
fn d_rollout() -> usize {
    128
}
fn d_entropy() -> f64 {
    0.01
}
fn d_value() -> f64 {
    0.5
}
fn d_grad() -> f64 {
    0.5
}
fn d_workers() -> usize {
    8
}
fn d_minibatches() -> usize {
    2
}
fn d_val_every() -> u64 {
    50
}
fn d_val_episodes() -> usize {
    50
}
fn d_teacher() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learner: Learner,
    pub total_steps: u64,
    #[serde(default = "d_workers")]
    pub workers: usize,
    #[serde(default = "d_rollout")]
    pub rollout_length: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_lambda")]
    pub gae_lambda: f64,
    #[serde(default = "d_clip")]
    pub clip_eps: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_minibatches")]
    pub minibatches: usize,
    #[serde(default = "d_entropy")]
    pub entropy_coef: f64,
    #[serde(default = "d_value")]
    pub value_coef: f64,
    #[serde(default = "d_grad")]
    pub max_grad_norm: f64,
    #[serde(default)]
    pub seed: u64,
    /// Validate every this many updates.
    #[serde(default = "d_val_every")]
    pub val_every: u64,
    #[serde(default = "d_val_episodes")]
    pub val_episodes: usize,
    /// Stop once validation SR reaches this value.
    #[serde(default)]
    pub target_sr: Option<f64>,
    /// Imitation only: initial probability of executing the expert's action.
    #[serde(default = "d_teacher")]
    pub teacher_forcing: f64,
    /// Imitation only: steps over which teacher forcing decays linearly to zero;
    /// zero keeps it constant.
    #[serde(default)]
    pub teacher_decay_steps: u64,
}

impl TrainConfig {
    pub fn ppo(total_steps: u64, seed: u64) -> Self {
        Self::with_learner(Learner::Ppo, total_steps, seed)
    }

    pub fn imitation(total_steps: u64, seed: u64) -> Self {
        TrainConfig { epochs: 1, ..Self::with_learner(Learner::Imitation, total_steps, seed) }
    }

    fn with_learner(learner: Learner, total_steps: u64, seed: u64) -> Self {
        TrainConfig {
            learner,
            total_steps,
            workers: d_workers(),
            rollout_length: d_rollout(),
            lr: d_lr(),
            gamma: d_gamma(),
            gae_lambda: d_lambda(),
            clip_eps: d_clip(),
            epochs: d_epochs(),
            minibatches: d_minibatches(),
            entropy_coef: d_entropy(),
            value_coef: d_value(),
            max_grad_norm: d_grad(),
            seed,
            val_every: d_val_every(),
            val_episodes: d_val_episodes(),
            target_sr: None,
            teacher_forcing: d_teacher(),
            teacher_decay_steps: 0,
        }
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.workers * self.rollout_length) as u64
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.workers, self.rollout_length, self.epochs, self.minibatches];
        if self.total_steps == 0 || counts.contains(&0) || self.val_every == 0 {
            return Err(Error::Config("training counts must be positive".into()));
        }
        if self.minibatches > self.workers {
            return Err(Error::Config(format!("{} minibatches exceed {} workers", self.minibatches, self.workers)));
        }
        let rates = [self.lr, self.gamma, self.gae_lambda, self.clip_eps, self.max_grad_norm];
        if rates.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("lr, gamma, gae_lambda, clip_eps and max_grad_norm must be positive".into()));
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err(Error::Config("gamma and gae_lambda must be at most 1".into()));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || !(0.0..=1.0).contains(&self.teacher_forcing) {
            return Err(Error::Config("coefficients must be non-negative and teacher_forcing in [0, 1]".into()));
        }
        Ok(())
    }

    /// Teacher-forcing probability after `steps` environment steps.
    pub fn teacher_prob(&self, steps: u64) -> f64 {
        if self.teacher_decay_steps == 0 {
            self.teacher_forcing
        } else {
            self.teacher_forcing * (1.0 - steps as f64 / self.teacher_decay_steps as f64).max(0.0)
        }
    }
}
