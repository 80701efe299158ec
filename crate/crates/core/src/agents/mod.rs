//! Recurrent actor-critic agents over frozen features.
//!
//! Every architecture is a front (architecture-specific encoding of features,
//! goal and previous action) followed by a GRU stack and linear actor/critic
//! heads. Only the agent's own parameters are trainable; encoders live elsewhere.

mod front;

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::io::{read_params, write_params};
use crate::nn::{softmax, Grads, GruCache, GruStack, Linear, ParamStore};
use crate::rng::{Rng, SeedStream};
use front::{Front, FrontCache};

pub use front::fuse_product;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    ObjectNav,
    Rearrange,
    Habitat,
    ZeroShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    Category,
    Polar,
}

fn d_hidden() -> usize {
    512
}
fn d_32() -> usize {
    32
}
fn d_goal_count() -> usize {
    12
}
fn d_embed() -> usize {
    1024
}
fn d_one() -> usize {
    1
}
fn d_goal_mode() -> GoalMode {
    GoalMode::Category
}

/// Agent dimensions. Defaults are the full-size values; desk-scale configs shrink them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub arch: Architecture,
    /// Backbone channels C.
    pub channels: usize,
    /// Backbone spatial size S (S x S positions).
    pub spatial: usize,
    /// Actor output size, the task's action-space size.
    pub actions: usize,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_one")]
    pub layers: usize,
    /// Channels of the compressed visual map (ObjectNav).
    #[serde(default = "d_32")]
    pub compress: usize,
    #[serde(default = "d_32")]
    pub goal_dim: usize,
    #[serde(default = "d_goal_count")]
    pub goal_count: usize,
    #[serde(default = "d_goal_mode")]
    pub goal_mode: GoalMode,
    #[serde(default = "d_32")]
    pub action_dim: usize,
    /// Attention-mask channels (Rearrange).
    #[serde(default = "d_hidden")]
    pub mask_channels: usize,
    /// Pooled visual and text embedding size (ZeroShot).
    #[serde(default = "d_embed")]
    pub embed: usize,
    /// Fusion scale for ZeroShot; defaults to `embed`.
    #[serde(default)]
    pub fusion_scale: Option<f64>,
}

impl AgentConfig {
    fn base(arch: Architecture, channels: usize, spatial: usize, actions: usize) -> Self {
        AgentConfig {
            arch,
            channels,
            spatial,
            actions,
            hidden: 512,
            layers: 1,
            compress: 32,
            goal_dim: 32,
            goal_count: 12,
            goal_mode: GoalMode::Category,
            action_dim: 32,
            mask_channels: 512,
            embed: 1024,
            fusion_scale: None,
        }
    }

    /// 2048x7x7 features, 12 goals, 1-layer GRU(512), 6 actions.
    pub fn objectnav_full() -> Self {
        Self::base(Architecture::ObjectNav, 2048, 7, 6)
    }

    pub fn rearrange_full(actions: usize) -> Self {
        Self::base(Architecture::Rearrange, 2048, 7, actions)
    }

    /// 2-layer GRU(512); 21 goal categories or a polar goal.
    pub fn habitat_full(goal_mode: GoalMode, actions: usize) -> Self {
        AgentConfig { layers: 2, goal_count: 21, goal_mode, ..Self::base(Architecture::Habitat, 2048, 7, actions) }
    }

    /// GRU(1024) over 1024-dim fused embeddings.
    pub fn zeroshot_full() -> Self {
        AgentConfig { hidden: 1024, ..Self::base(Architecture::ZeroShot, 2048, 7, 6) }
    }

    pub fn fusion_scale(&self) -> f64 {
        self.fusion_scale.unwrap_or(self.embed as f64)
    }

    /// Length of the GRU input vector.
    pub fn gru_input(&self) -> usize {
        Front::output_dim(self)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.channels, self.spatial, self.actions, self.hidden, self.layers];
        if dims.contains(&0) {
            return Err(Error::Config("agent dimensions must be positive".into()));
        }
        let specific = match self.arch {
            Architecture::ObjectNav => [self.compress, self.goal_dim, self.goal_count].contains(&0),
            Architecture::Rearrange => self.mask_channels == 0,
            Architecture::Habitat => [self.goal_dim, self.goal_count, self.action_dim].contains(&0),
            Architecture::ZeroShot => self.embed == 0,
        };
        if specific {
            return Err(Error::Config(format!("{:?} dimensions must be positive", self.arch)));
        }
        Ok(())
    }
}

/// Visual part of an agent input, as f64 copies of frozen features.
#[derive(Debug, Clone, PartialEq)]
pub enum Visual {
    /// C x S x S, channel-major.
    Map(Vec<f64>),
    /// Current and goal-scene maps.
    Pair(Vec<f64>, Vec<f64>),
    /// Already pooled vector.
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GoalInput {
    None,
    Category(usize),
    Polar([f64; 2]),
    Text(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentInput {
    pub visual: Visual,
    pub goal: GoalInput,
    pub prev_action: Option<usize>,
}

/// Stacked recurrent state, `layers x size`, layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub layers: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(layers: usize, size: usize) -> Self {
        HiddenState { layers, size, data: vec![0.0; layers * size] }
    }

    pub fn reset(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub value: f64,
    pub hidden: HiddenState,
}

impl PolicyOutput {
    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Argmax,
}

/// Pick an action index: a softmax draw, or the highest logit (lowest index on ties).
pub fn act(out: &PolicyOutput, mode: ActMode, rng: &mut Rng) -> usize {
    match mode {
        ActMode::Argmax => argmax(&out.logits),
        ActMode::Sample => {
            let p = out.probs();
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return i;
                }
            }
            p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
        }
    }
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    front: FrontCache,
    gru_in: Vec<f64>,
    gru: Vec<GruCache>,
    top: Vec<f64>,
}

/// A recurrent actor-critic agent. Owns only trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub config: AgentConfig,
    pub params: ParamStore,
    front: Front,
    gru: GruStack,
    actor: Linear,
    critic: Linear,
}

impl Agent {
    pub fn new(config: &AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedStream::new(seed).child("agent").rng();
        let mut ps = ParamStore::new();
        let front = Front::new(config, &mut ps, &mut rng);
        let gru = GruStack::new(&mut ps, "gru", config.gru_input(), config.hidden, config.layers, &mut rng);
        let actor = Linear::new(&mut ps, "actor", config.hidden, config.actions, &mut rng);
        let critic = Linear::new(&mut ps, "critic", config.hidden, 1, &mut rng);
        Ok(Agent { config: config.clone(), params: ps, front, gru, actor, critic })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn initial_hidden(&self) -> HiddenState {
        HiddenState::zeros(self.config.layers, self.config.hidden)
    }

    fn check_hidden(&self, h: &HiddenState) -> Result<()> {
        if h.layers != self.config.layers || h.size != self.config.hidden || h.data.len() != h.layers * h.size {
            return Err(Error::Shape {
                expected: format!("{}x{} hidden state", self.config.layers, self.config.hidden),
                got: format!("{}x{} ({} values)", h.layers, h.size, h.data.len()),
            });
        }
        Ok(())
    }

    /// The GRU input vector for `input` (the compressed visual embedding for ObjectNav).
    pub fn embed_input(&self, input: &AgentInput) -> Result<Vec<f64>> {
        Ok(self.front.forward(&self.config, &self.params, input)?.0)
    }

    pub fn forward(&self, input: &AgentInput, h: &HiddenState) -> Result<PolicyOutput> {
        Ok(self.forward_cached(input, h)?.0)
    }

    pub fn forward_cached(&self, input: &AgentInput, h: &HiddenState) -> Result<(PolicyOutput, StepCache)> {
        self.check_hidden(h)?;
        let (gru_in, front) = self.front.forward(&self.config, &self.params, input)?;
        let (hn, gru) = self.gru.forward(&self.params, &gru_in, &h.data);
        let top = hn[(self.config.layers - 1) * self.config.hidden..].to_vec();
        let logits = self.actor.forward(&self.params, &top);
        let value = self.critic.forward(&self.params, &top)[0];
        if !logits.iter().all(|v| v.is_finite()) || !value.is_finite() {
            return Err(Error::NonFinite("policy output".into()));
        }
        let hidden = HiddenState { layers: h.layers, size: h.size, data: hn };
        Ok((PolicyOutput { logits, value, hidden }, StepCache { front, gru_in, gru, top }))
    }

    /// Backpropagate one step. `dh_next` is the gradient on this step's output
    /// hidden state from later steps; returns the gradient on its input hidden state.
    pub fn backward_step(
        &self,
        cache: &StepCache,
        d_logits: &[f64],
        d_value: f64,
        dh_next: &[f64],
        grads: &mut Grads,
    ) -> Vec<f64> {
        let ps = &self.params;
        let mut d_top = vec![0.0; self.config.hidden];
        self.actor.backward(ps, &cache.top, d_logits, grads, Some(&mut d_top));
        self.critic.backward(ps, &cache.top, &[d_value], grads, Some(&mut d_top));
        let needs_dx = !matches!(self.front, Front::ZeroShot);
        let (dx, dh_prev) = self.gru.backward(ps, &cache.gru, &d_top, dh_next, grads, needs_dx);
        if let Some(dx) = dx {
            self.front.backward(&self.config, ps, &cache.front, &dx, grads);
        }
        debug_assert_eq!(cache.gru_in.len(), self.config.gru_input());
        dh_prev
    }

    /// Run a sequence. `resets[t]` zeroes the hidden state before step `t`.
    pub fn forward_seq(
        &self,
        inputs: &[AgentInput],
        resets: &[bool],
        h0: &HiddenState,
    ) -> Result<(Vec<PolicyOutput>, Vec<StepCache>)> {
        let refs: Vec<&AgentInput> = inputs.iter().collect();
        self.forward_seq_refs(&refs, resets, h0)
    }

    pub fn forward_seq_refs(
        &self,
        inputs: &[&AgentInput],
        resets: &[bool],
        h0: &HiddenState,
    ) -> Result<(Vec<PolicyOutput>, Vec<StepCache>)> {
        if inputs.len() != resets.len() {
            return Err(Error::Shape {
                expected: format!("{} reset flags", inputs.len()),
                got: format!("{}", resets.len()),
            });
        }
        let mut h = h0.clone();
        let mut outs = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        for (x, &r) in inputs.iter().zip(resets) {
            if r {
                h.reset();
            }
            let (o, c) = self.forward_cached(x, &h)?;
            h = o.hidden.clone();
            outs.push(o);
            caches.push(c);
        }
        Ok((outs, caches))
    }

    /// Backpropagation through time over a `forward_seq` result. Gradients do
    /// not cross reset boundaries. Returns the gradient on `h0`.
    pub fn backward_seq(
        &self,
        caches: &[StepCache],
        resets: &[bool],
        d_logits: &[Vec<f64>],
        d_values: &[f64],
        grads: &mut Grads,
    ) -> Vec<f64> {
        let mut dh = vec![0.0; self.config.layers * self.config.hidden];
        for t in (0..caches.len()).rev() {
            dh = self.backward_step(&caches[t], &d_logits[t], d_values[t], &dh, grads);
            if resets[t] {
                dh.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        dh
    }

    pub fn grads(&self) -> Grads {
        self.params.zeros_like()
    }

    pub fn save(&self, dir: &Path, step: u64) -> Result<()> {
        let meta = serde_json::json!({ "arch": self.config.arch, "config": self.config, "step": step });
        write_params(dir, &self.params, meta)
    }

    /// Load a checkpoint; returns the agent and its recorded step count.
    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let (ps, meta) = read_params(dir)?;
        let config: AgentConfig = serde_json::from_value(meta["config"].clone())?;
        let step = meta["step"].as_u64().unwrap_or(0);
        let mut agent = Agent::new(&config, 0)?;
        agent.params.copy_from(&ps)?;
        Ok((agent, step))
    }

    /// Load a checkpoint and require the given architecture and action count.
    pub fn load_expecting(dir: &Path, arch: Architecture, actions: usize) -> Result<(Self, u64)> {
        let (agent, step) = Self::load(dir)?;
        if agent.config.arch != arch || agent.config.actions != actions {
            return Err(Error::Config(format!(
                "checkpoint is a {:?} agent with {} actions, task needs {:?} with {}",
                agent.config.arch, agent.config.actions, arch, actions
            )));
        }
        Ok((agent, step))
    }
}

#[cfg(test)]
mod tests;
