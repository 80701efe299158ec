use rand::Rng as _;

use super::Perception;
use crate::agents::{act, argmax, ActMode, Agent, HiddenState};
use crate::error::Result;
use crate::metrics::{spl, EpisodeRecord};
use crate::rng::{Rng, SeedStream};
use crate::sim::expert::expert_action;
use crate::sim::task::Episode;
use crate::sim::{EpisodeLog, Observation, SimState};

/// Chooses action indices for a running episode.
pub trait Controller {
    fn name(&self) -> String;

    /// Whether `act` needs a rendered observation.
    fn needs_observation(&self) -> bool {
        true
    }

    fn reset(&mut self, state: &SimState) -> Result<()>;

    fn act(&mut self, state: &SimState, obs: Option<&Observation>) -> Result<usize>;
}

pub struct AgentController<'a> {
    pub agent: &'a Agent,
    pub perception: &'a Perception,
    pub mode: ActMode,
    hidden: HiddenState,
    rng: Rng,
    name: String,
}

impl<'a> AgentController<'a> {
    pub fn new(name: &str, agent: &'a Agent, perception: &'a Perception, mode: ActMode, seed: u64) -> Self {
        AgentController {
            agent,
            perception,
            mode,
            hidden: agent.initial_hidden(),
            rng: SeedStream::new(seed).child("controller").rng(),
            name: name.into(),
        }
    }
}

impl Controller for AgentController<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn reset(&mut self, _: &SimState) -> Result<()> {
        self.hidden.reset();
        Ok(())
    }

    fn act(&mut self, _: &SimState, obs: Option<&Observation>) -> Result<usize> {
        let obs = obs.expect("agent controllers request observations");
        let out = self.agent.forward(&self.perception.input(obs)?, &self.hidden)?;
        let a = act(&out, self.mode, &mut self.rng);
        self.hidden = out.hidden;
        Ok(a)
    }
}

/// Shortest-path expert with privileged state access.
#[derive(Debug, Clone, Default)]
pub struct ExpertController;

impl Controller for ExpertController {
    fn name(&self) -> String {
        "expert".into()
    }

    fn needs_observation(&self) -> bool {
        false
    }

    fn reset(&mut self, _: &SimState) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, state: &SimState, _: Option<&Observation>) -> Result<usize> {
        let a = expert_action(state)?;
        Ok(state.actions.index_of(a).expect("expert acts within the action space"))
    }
}

/// Uniform over the action space.
#[derive(Debug, Clone)]
pub struct RandomController {
    rng: Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        RandomController { rng: SeedStream::new(seed).child("random-policy").rng() }
    }
}

impl Controller for RandomController {
    fn name(&self) -> String {
        "random".into()
    }

    fn needs_observation(&self) -> bool {
        false
    }

    fn reset(&mut self, _: &SimState) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, state: &SimState, _: Option<&Observation>) -> Result<usize> {
        Ok(self.rng.gen_range(0..state.actions.len()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub record: EpisodeRecord,
    pub log: EpisodeLog,
    pub frames: u64,
}

pub fn run_episode(ctrl: &mut dyn Controller, episode: &Episode) -> Result<EpisodeOutcome> {
    let mut state = SimState::new(episode)?;
    ctrl.reset(&state)?;
    let mut actions = Vec::new();
    let mut frames = 0;
    while !state.done {
        let obs = if ctrl.needs_observation() {
            frames += Perception::frames_per_observation(state.task.kind) as u64;
            Some(state.observe())
        } else {
            None
        };
        let index = ctrl.act(&state, obs.as_ref())?;
        let a = state.actions.get(index)?;
        state.apply(a)?;
        actions.push(a);
    }
    let record = EpisodeRecord::from_state(&state)?;
    let log = EpisodeLog {
        seed: episode.seed,
        config: episode.config.clone(),
        task: episode.task.clone(),
        actions,
        success: state.success,
        spl: spl(std::slice::from_ref(&record))?,
        path_length: state.path_length,
    };
    Ok(EpisodeOutcome { record, log, frames })
}

pub fn evaluate(ctrl: &mut dyn Controller, episodes: &[Episode]) -> Result<Vec<EpisodeOutcome>> {
    episodes.iter().map(|e| run_episode(ctrl, e)).collect()
}

/// Fraction of states along expert trajectories where the agent's argmax action
/// equals the expert's. The agent's recurrent state follows the expert's path.
pub fn expert_agreement(agent: &Agent, perception: &Perception, episodes: &[Episode]) -> Result<f64> {
    let (mut agree, mut total) = (0usize, 0usize);
    for ep in episodes {
        let mut state = SimState::new(ep)?;
        let mut h = agent.initial_hidden();
        while !state.done {
            let out = agent.forward(&perception.input(&state.observe())?, &h)?;
            let e = expert_action(&state)?;
            let ei = state.actions.index_of(e).expect("expert acts within the action space");
            agree += (argmax(&out.logits) == ei) as usize;
            total += 1;
            h = out.hidden;
            state.apply(e)?;
        }
    }
    Ok(if total == 0 { 0.0 } else { agree as f64 / total as f64 })
}
