use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Perception, SeedRange};
use crate::agents::{act, ActMode, Agent, AgentInput, HiddenState};
use crate::error::{Error, Result};
use crate::nn::log_softmax;
use crate::rng::{Rng, SeedStream};
use crate::sim::expert::expert_action;
use crate::sim::task::{make_episode, Episode};
use crate::sim::{Action, SimConfig, SimState};

/// Episodes for one split: a sim config and the seeds to draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSource {
    pub config: SimConfig,
    pub seeds: SeedRange,
}

impl EpisodeSource {
    pub fn episode(&self, index: u64) -> Result<Episode> {
        make_episode(self.seeds.get(index), &self.config)
    }

    pub fn episodes(&self, n: usize) -> Result<Vec<Episode>> {
        (0..n as u64).map(|i| self.episode(i)).collect()
    }
}

/// One simulator instance with its recurrent state.
#[derive(Debug, Clone)]
pub struct Worker {
    pub index: usize,
    pub episode: Episode,
    pub state: SimState,
    /// Actions taken in the current episode.
    pub actions: Vec<Action>,
    pub episodes_started: u64,
    pub input: AgentInput,
    pub hidden: HiddenState,
    /// The next step is the first of an episode.
    pub fresh: bool,
    pub rng: Rng,
}

/// Restorable part of a worker; observation and hidden state are rebuilt or stored separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSnapshot {
    pub index: usize,
    pub episode: Episode,
    pub actions: Vec<Action>,
    pub episodes_started: u64,
    pub fresh: bool,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: String,
}

impl Worker {
    pub fn new(
        index: usize,
        source: &EpisodeSource,
        agent: &Agent,
        perception: &Perception,
        seed: u64,
    ) -> Result<Self> {
        let rng = SeedStream::new(seed).child("worker").index(index as u64).rng();
        let episode = source.episode(index as u64)?;
        let state = SimState::new(&episode)?;
        let input = perception.input(&state.observe())?;
        Ok(Worker {
            index,
            episode,
            state,
            actions: Vec::new(),
            episodes_started: 1,
            input,
            hidden: agent.initial_hidden(),
            fresh: true,
            rng,
        })
    }

    fn next_episode(&mut self, workers: usize, source: &EpisodeSource) -> Result<()> {
        let k = self.episodes_started * workers as u64 + self.index as u64;
        self.episode = source.episode(k)?;
        self.state = SimState::new(&self.episode)?;
        self.actions.clear();
        self.episodes_started += 1;
        self.fresh = true;
        Ok(())
    }

    pub fn snapshot(&self) -> WorkerSnapshot {
        WorkerSnapshot {
            index: self.index,
            episode: self.episode.clone(),
            actions: self.actions.clone(),
            episodes_started: self.episodes_started,
            fresh: self.fresh,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
        }
    }

    /// Rebuild a worker by replaying its episode's actions.
    pub fn restore(snap: &WorkerSnapshot, hidden: HiddenState, perception: &Perception) -> Result<Self> {
        let mut state = SimState::new(&snap.episode)?;
        for a in &snap.actions {
            state.apply(*a)?;
        }
        let input = perception.input(&state.observe())?;
        let mut rng = ChaCha8Rng::from_seed(snap.rng_seed);
        rng.set_stream(snap.rng_stream);
        let pos: u128 = snap.rng_word_pos.parse().map_err(|_| Error::Format("bad rng word position".into()))?;
        rng.set_word_pos(pos);
        Ok(Worker {
            index: snap.index,
            episode: snap.episode.clone(),
            state,
            actions: snap.actions.clone(),
            episodes_started: snap.episodes_started,
            input,
            hidden,
            fresh: snap.fresh,
            rng,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub input: AgentInput,
    /// Executed action index.
    pub action: usize,
    /// Log-probability of the executed action under the acting policy.
    pub logp: f64,
    pub value: f64,
    pub reward: f64,
    /// This step ended the episode.
    pub done: bool,
    /// This step started an episode (hidden state was zeroed before it).
    pub reset: bool,
    pub expert: Option<usize>,
    /// Hidden state fed into this step.
    pub hidden: HiddenState,
    pub episode_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerSeq {
    pub h0: HiddenState,
    pub steps: Vec<StepRecord>,
    pub last_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEnd {
    pub seed: u64,
    pub success: bool,
    pub goal_category: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub seqs: Vec<WorkerSeq>,
    /// Frames rendered during collection (each encoded once).
    pub frames: u64,
    pub finished: Vec<EpisodeEnd>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.seqs.iter().map(|s| s.steps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How actions are chosen during collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Behavior {
    /// Sample from the policy.
    Policy,
    /// Label every step with the expert action and execute it with probability `teacher`.
    Imitation { teacher: f64 },
}

struct WorkerOut {
    seq: WorkerSeq,
    frames: u64,
    finished: Vec<EpisodeEnd>,
}

fn run_worker(
    w: &mut Worker,
    agent: &Agent,
    perception: &Perception,
    source: &EpisodeSource,
    workers: usize,
    len: usize,
    behavior: Behavior,
) -> Result<WorkerOut> {
    let per_obs = Perception::frames_per_observation(w.state.task.kind) as u64;
    let h0 = if w.fresh { agent.initial_hidden() } else { w.hidden.clone() };
    let mut steps = Vec::with_capacity(len);
    let mut frames = 0;
    let mut finished = Vec::new();
    for _ in 0..len {
        let reset = w.fresh;
        if reset {
            w.hidden.reset();
        }
        let out = agent.forward(&w.input, &w.hidden)?;
        let sampled = act(&out, ActMode::Sample, &mut w.rng);
        let (action, expert) = match behavior {
            Behavior::Policy => (sampled, None),
            Behavior::Imitation { teacher } => {
                let e =
                    w.state.actions.index_of(expert_action(&w.state)?).expect("expert acts within the action space");
                let use_expert = w.rng.gen::<f64>() < teacher;
                (if use_expert { e } else { sampled }, Some(e))
            }
        };
        let logp = log_softmax(&out.logits)[action];
        let a = w.state.actions.get(action)?;
        let (reward, _) = w.state.apply(a)?;
        w.actions.push(a);
        let done = w.state.done;
        let seed = w.episode.seed;
        steps.push(StepRecord {
            input: w.input.clone(),
            action,
            logp,
            value: out.value,
            reward,
            done,
            reset,
            expert,
            hidden: w.hidden.clone(),
            episode_seed: seed,
        });
        w.hidden = out.hidden;
        w.fresh = false;
        if done {
            finished.push(EpisodeEnd { seed, success: w.state.success, goal_category: w.state.task.goal_category });
            w.next_episode(workers, source)?;
        }
        w.input = perception.input(&w.state.observe())?;
        frames += per_obs;
    }
    let mut h = w.hidden.clone();
    if w.fresh {
        h.reset();
    }
    let last_value = agent.forward(&w.input, &h)?.value;
    Ok(WorkerOut {
        seq: WorkerSeq { h0, steps, last_value, advantages: Vec::new(), returns: Vec::new() },
        frames,
        finished,
    })
}

/// Step every worker `len` times. Workers are independent, so they run on up
/// to `threads` OS threads without affecting results.
pub fn collect_rollout(
    agent: &Agent,
    perception: &Perception,
    workers: &mut [Worker],
    source: &EpisodeSource,
    len: usize,
    behavior: Behavior,
    threads: usize,
) -> Result<RolloutBuffer> {
    let n = workers.len();
    let outs: Vec<Result<WorkerOut>> = if threads <= 1 || n <= 1 {
        workers.iter_mut().map(|w| run_worker(w, agent, perception, source, n, len, behavior)).collect()
    } else {
        let chunk = n.div_ceil(threads.min(n));
        std::thread::scope(|s| {
            let handles: Vec<_> = workers
                .chunks_mut(chunk)
                .map(|ws| {
                    s.spawn(move || {
                        ws.iter_mut()
                            .map(|w| run_worker(w, agent, perception, source, n, len, behavior))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("worker thread panicked")).collect()
        })
    };
    let mut buf = RolloutBuffer { seqs: Vec::with_capacity(n), frames: 0, finished: Vec::new() };
    for o in outs {
        let o = o?;
        buf.frames += o.frames;
        buf.finished.extend(o.finished);
        buf.seqs.push(o.seq);
    }
    Ok(buf)
}
