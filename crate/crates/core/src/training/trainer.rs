use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, AgentController};
use super::rollout::{collect_rollout, Behavior, EpisodeSource, Worker, WorkerSnapshot};
use super::update::{imitation_update, ppo_update};
use super::{perception::check_task, Learner, LossReport, Perception, TrainConfig};
use crate::agents::{ActMode, Agent, AgentConfig, HiddenState};
use crate::encoders::files::read_artifact;
use crate::error::{Error, Result};
use crate::metrics::{csv_err, spl, success_rate, EpisodeRecord};
use crate::nn::io::{read_params, write_params};
use crate::nn::{Adam, Grads, ParamStore};
use crate::sim::task::Episode;

pub const TRAIN_LOG_HEADER: [&str; 6] = ["step", "loss_policy", "loss_value", "entropy", "sr_val", "spl_val"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss_policy: f64,
    pub loss_value: f64,
    pub entropy: f64,
    pub sr_val: Option<f64>,
    pub spl_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestScore {
    pub sr: f64,
    pub spl: f64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    config: TrainConfig,
    agent: AgentConfig,
    steps: u64,
    updates: u64,
    log: Vec<LogRow>,
    best: Option<BestScore>,
    workers: Vec<WorkerSnapshot>,
    trained_goals: BTreeSet<usize>,
    stopped_early: bool,
    adam_t: u64,
}

const STATE_FILE: &str = "trainer.json";

/// Owns the agent and optimizer; the only writer of trainable parameters.
pub struct Trainer {
    pub config: TrainConfig,
    pub agent: Agent,
    pub opt: Adam,
    pub perception: Perception,
    pub train: EpisodeSource,
    pub val: Vec<Episode>,
    workers: Vec<Worker>,
    pub steps: u64,
    pub updates: u64,
    pub log: Vec<LogRow>,
    pub best: Option<BestScore>,
    best_params: Option<ParamStore>,
    /// Goal categories of every training episode that finished.
    pub trained_goals: BTreeSet<usize>,
    pub stopped_early: bool,
    /// Frames rendered by training rollouts (initial worker observations excluded).
    pub frames: u64,
    pub threads: usize,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        agent: Agent,
        perception: Perception,
        train: EpisodeSource,
        val: Vec<Episode>,
    ) -> Result<Self> {
        config.validate()?;
        let kind = train.episode(0)?.task.kind;
        check_task(&agent.config, kind)?;
        let workers = (0..config.workers)
            .map(|i| Worker::new(i, &train, &agent, &perception, config.seed))
            .collect::<Result<_>>()?;
        let opt = Adam::new(&agent.params, config.lr);
        Ok(Trainer {
            config,
            agent,
            opt,
            perception,
            train,
            val,
            workers,
            steps: 0,
            updates: 0,
            log: Vec::new(),
            best: None,
            best_params: None,
            trained_goals: BTreeSet::new(),
            stopped_early: false,
            frames: 0,
            threads: 1,
        })
    }

    pub fn finished(&self) -> bool {
        self.stopped_early || self.steps >= self.config.total_steps
    }

    /// One rollout and update, with validation on schedule.
    pub fn iterate(&mut self) -> Result<LogRow> {
        let behavior = match self.config.learner {
            Learner::Ppo => Behavior::Policy,
            Learner::Imitation => Behavior::Imitation { teacher: self.config.teacher_prob(self.steps) },
        };
        let mut buf = collect_rollout(
            &self.agent,
            &self.perception,
            &mut self.workers,
            &self.train,
            self.config.rollout_length,
            behavior,
            self.threads,
        )?;
        self.frames += buf.frames;
        self.trained_goals.extend(buf.finished.iter().filter_map(|e| e.goal_category));
        let rep: LossReport = match self.config.learner {
            Learner::Ppo => ppo_update(&mut self.agent, &mut self.opt, &mut buf, &self.config)?,
            Learner::Imitation => imitation_update(&mut self.agent, &mut self.opt, &buf, &self.config)?,
        };
        self.steps += buf.len() as u64;
        self.updates += 1;
        let mut row = LogRow {
            step: self.steps,
            loss_policy: rep.policy,
            loss_value: rep.value,
            entropy: rep.entropy,
            sr_val: None,
            spl_val: None,
        };
        let last = self.steps >= self.config.total_steps;
        if (self.updates.is_multiple_of(self.config.val_every) || last) && !self.val.is_empty() {
            let (sr, s) = self.validate()?;
            row.sr_val = Some(sr);
            row.spl_val = Some(s);
            let better = self.best.as_ref().is_none_or(|b| (sr, s) > (b.sr, b.spl));
            if better {
                self.best = Some(BestScore { sr, spl: s, step: self.steps });
                self.best_params = Some(self.agent.params.clone());
            }
            if self.config.target_sr.is_some_and(|t| sr >= t) {
                self.stopped_early = true;
            }
        }
        self.log.push(row.clone());
        Ok(row)
    }

    /// Train until the step budget is spent or validation reaches the target.
    /// Checkpoints into `ckpt` every `every` updates when given.
    pub fn run(&mut self, ckpt: Option<(&Path, u64)>) -> Result<()> {
        while !self.finished() {
            self.iterate()?;
            if let Some((dir, every)) = ckpt {
                if every > 0 && self.updates.is_multiple_of(every) {
                    self.save(dir)?;
                }
            }
        }
        if let Some((dir, _)) = ckpt {
            self.save(dir)?;
        }
        Ok(())
    }

    /// Argmax SR and SPL on the validation episodes.
    pub fn validate(&self) -> Result<(f64, f64)> {
        let mut ctrl = AgentController::new("val", &self.agent, &self.perception, ActMode::Argmax, self.config.seed);
        let records: Vec<EpisodeRecord> = evaluate(&mut ctrl, &self.val)?.into_iter().map(|o| o.record).collect();
        Ok((success_rate(&records)?, spl(&records)?))
    }

    /// The best-validation agent, or the current one if never validated.
    pub fn best_agent(&self) -> Agent {
        let mut a = self.agent.clone();
        if let Some(p) = &self.best_params {
            a.params = p.clone();
        }
        a
    }

    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        write_log_csv(out, &self.log)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.agent.save(&dir.join("agent"), self.steps)?;
        if let Some(p) = &self.best_params {
            write_params(&dir.join("best"), p, serde_json::json!({ "step": self.best.as_ref().map(|b| b.step) }))?;
        }
        write_params(&dir.join("optim_m"), &grads_store(&self.agent.params, &self.opt.m), serde_json::Value::Null)?;
        write_params(&dir.join("optim_v"), &grads_store(&self.agent.params, &self.opt.v), serde_json::Value::Null)?;
        let mut hidden = ParamStore::new();
        for w in &self.workers {
            hidden.add(format!("worker{}", w.index), &[w.hidden.layers, w.hidden.size], w.hidden.data.clone());
        }
        write_params(&dir.join("hidden"), &hidden, serde_json::Value::Null)?;
        let state = TrainerState {
            config: self.config.clone(),
            agent: self.agent.config.clone(),
            steps: self.steps,
            updates: self.updates,
            log: self.log.clone(),
            best: self.best.clone(),
            workers: self.workers.iter().map(Worker::snapshot).collect(),
            trained_goals: self.trained_goals.clone(),
            stopped_early: self.stopped_early,
            adam_t: self.opt.t,
        };
        // Written last so a partial checkpoint is never mistaken for a complete one.
        let tmp = dir.join("trainer.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&state)?)?;
        std::fs::rename(tmp, dir.join(STATE_FILE))?;
        Ok(())
    }

    pub fn has_checkpoint(dir: &Path) -> bool {
        dir.join(STATE_FILE).exists()
    }

    /// Continue a saved run. The configuration must match the saved one.
    pub fn resume(
        dir: &Path,
        config: &TrainConfig,
        perception: Perception,
        train: EpisodeSource,
        val: Vec<Episode>,
    ) -> Result<Self> {
        let state: TrainerState = serde_json::from_slice(&read_artifact(&dir.join(STATE_FILE))?)?;
        if &state.config != config {
            return Err(Error::Config("training config differs from the checkpointed run".into()));
        }
        let (agent, _) = Agent::load(&dir.join("agent"))?;
        if agent.config != state.agent {
            return Err(Error::Config("agent config differs from the checkpointed run".into()));
        }
        let best_params = if state.best.is_some() {
            let (p, _) = read_params(&dir.join("best"))?;
            let mut copy = agent.params.clone();
            copy.copy_from(&p)?;
            Some(copy)
        } else {
            None
        };
        let mut opt = Adam::new(&agent.params, config.lr);
        opt.t = state.adam_t;
        opt.m = store_grads(&agent.params, &read_params(&dir.join("optim_m"))?.0)?;
        opt.v = store_grads(&agent.params, &read_params(&dir.join("optim_v"))?.0)?;
        let (hidden, _) = read_params(&dir.join("hidden"))?;
        let workers = state
            .workers
            .iter()
            .map(|snap| {
                let id = hidden
                    .find(&format!("worker{}", snap.index))
                    .ok_or_else(|| Error::Format("missing worker hidden state".into()))?;
                let shape = hidden.shape(id);
                let h = HiddenState { layers: shape[0], size: shape[1], data: hidden.get(id).to_vec() };
                Worker::restore(snap, h, &perception)
            })
            .collect::<Result<_>>()?;
        Ok(Trainer {
            config: state.config,
            agent,
            opt,
            perception,
            train,
            val,
            workers,
            steps: state.steps,
            updates: state.updates,
            log: state.log,
            best: state.best,
            best_params,
            trained_goals: state.trained_goals,
            stopped_early: state.stopped_early,
            frames: 0,
            threads: 1,
        })
    }
}

fn grads_store(names: &ParamStore, g: &Grads) -> ParamStore {
    let mut ps = ParamStore::new();
    for id in names.ids() {
        ps.add(names.name(id), names.shape(id), g.get(id).to_vec());
    }
    ps
}

fn store_grads(names: &ParamStore, ps: &ParamStore) -> Result<Grads> {
    let mut check = names.clone();
    check.copy_from(ps)?;
    Ok(Grads(ps.ids().map(|id| ps.get(id).to_vec()).collect()))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

pub fn write_log_csv<W: Write>(out: W, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAIN_LOG_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            format!("{:.6}", r.loss_policy),
            format!("{:.6}", r.loss_value),
            format!("{:.6}", r.entropy),
            opt_cell(r.sr_val),
            opt_cell(r.spl_val),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
