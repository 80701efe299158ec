//! Frozen-backbone embodied navigation: a grid-room simulator, frozen visual
//! encoders, recurrent actor-critic agents, PPO and imitation trainers, linear
//! probes and navigation metrics.

pub mod agents;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod probes;
pub mod rng;
pub mod sim;
pub mod training;

pub use agents::{Agent, AgentConfig, Architecture};
pub use encoders::{Backbone, BackboneSource, BackboneSpec};
pub use error::{Error, Result};
pub use metrics::{EpisodeRecord, MetricReport};
pub use probes::{Pooling, ProbeTask};
pub use sim::{SimConfig, TaskKind};
pub use training::{SeedRange, TrainConfig, Trainer};
