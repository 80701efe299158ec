use std::sync::Arc;

use crate::agents::{AgentConfig, AgentInput, Architecture, GoalInput, GoalMode, Visual};
use crate::encoders::{average_pool, text_goal_embed, Backbone};
use crate::error::{Error, Result};
use crate::sim::scene::category_name;
use crate::sim::task::GoalObservation;
use crate::sim::{Observation, TaskKind};

/// Turns observations into agent inputs through a frozen backbone. Each
/// rendered frame is encoded exactly once.
#[derive(Debug, Clone)]
pub struct Perception {
    pub backbone: Arc<Backbone>,
    pub arch: Architecture,
    text: Vec<Vec<f64>>,
}

impl Perception {
    pub fn new(backbone: Arc<Backbone>, agent: &AgentConfig, category_count: usize) -> Result<Self> {
        let spec = &backbone.spec;
        if agent.arch != Architecture::ZeroShot && (agent.channels != spec.channels || agent.spatial != spec.spatial) {
            return Err(Error::Config(format!(
                "agent expects {}x{}x{} features, backbone {} gives {}x{}x{}",
                agent.channels, agent.spatial, agent.spatial, spec.id, spec.channels, spec.spatial, spec.spatial
            )));
        }
        let text = if agent.arch == Architecture::ZeroShot {
            if spec.attention.is_none() {
                return Err(Error::Config(format!(
                    "zero-shot agent needs attention-pool weights on backbone {}",
                    spec.id
                )));
            }
            if spec.text_dim() != agent.embed {
                return Err(Error::Config(format!(
                    "zero-shot embed {} differs from backbone text dim {}",
                    agent.embed,
                    spec.text_dim()
                )));
            }
            (0..category_count).map(|c| text_goal_embed(&category_name(c), spec)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Perception { backbone, arch: agent.arch, text })
    }

    /// Number of frames the agent consumes per observation.
    pub fn frames_per_observation(task: TaskKind) -> usize {
        if task == TaskKind::Rearrange1Phase {
            2
        } else {
            1
        }
    }

    pub fn input(&self, obs: &Observation) -> Result<AgentInput> {
        let encode = |f| self.backbone.encode(f).map(|m| m.to_f64());
        let visual = match (self.arch, &obs.goal) {
            (Architecture::Rearrange, GoalObservation::Scene(goal)) => Visual::Pair(encode(&obs.frame)?, encode(goal)?),
            (Architecture::Rearrange, _) => {
                return Err(Error::Config("rearrangement agent needs a goal-scene observation".into()))
            }
            (Architecture::ZeroShot, _) => {
                let f = self.backbone.encode(&obs.frame)?;
                Visual::Vector(self.backbone.attention_pool(&f)?)
            }
            _ => Visual::Map(encode(&obs.frame)?),
        };
        let goal = match (&obs.goal, self.arch) {
            (GoalObservation::Category(c), Architecture::ZeroShot) => GoalInput::Text(
                self.text.get(*c).cloned().ok_or(Error::OutOfRange { index: *c, limit: self.text.len() })?,
            ),
            (GoalObservation::Category(c), _) => GoalInput::Category(*c),
            (GoalObservation::Polar(p), _) => GoalInput::Polar(*p),
            (GoalObservation::Scene(_), _) => GoalInput::None,
        };
        Ok(AgentInput { visual, goal, prev_action: obs.prev_action })
    }

    /// Pooled C-vector of a frame, for proxy classification.
    pub fn pooled(&self, obs: &Observation) -> Result<Vec<f64>> {
        average_pool(&self.backbone.encode(&obs.frame)?, 1)
    }
}

/// Check that a goal mode fits the task the agent will see.
pub fn check_task(agent: &AgentConfig, task: TaskKind) -> Result<()> {
    let ok = match agent.arch {
        Architecture::ObjectNav | Architecture::ZeroShot => task == TaskKind::ObjectNav,
        Architecture::Rearrange => task == TaskKind::Rearrange1Phase,
        Architecture::Habitat => match agent.goal_mode {
            GoalMode::Category => task == TaskKind::ObjectNav,
            GoalMode::Polar => task == TaskKind::PointNav,
        },
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{:?} agent cannot run {:?} episodes", agent.arch, task)))
    }
}
