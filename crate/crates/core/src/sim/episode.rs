//! JSON-lines episode logs, one episode per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::scene::SimConfig;
use super::task::{make_episode, Action, SimState, TaskSpec};
use crate::error::{Error, Result};

/// Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub config: SimConfig,
    pub task: TaskSpec,
    pub actions: Vec<Action>,
    pub success: bool,
    pub spl: f64,
    pub path_length: f64,
}

impl EpisodeLog {
    /// Regenerate the episode from (seed, config) and re-run the actions.
    pub fn replay(&self) -> Result<SimState> {
        let episode = make_episode(self.seed, &self.config)?;
        if episode.task != self.task {
            return Err(Error::SceneMismatch(format!("episode {} regenerates a different task", self.seed)));
        }
        let mut state = SimState::new(&episode)?;
        for &a in &self.actions {
            state.apply(a)?;
        }
        Ok(state)
    }
}

pub fn write_jsonl<W: Write>(mut out: W, logs: &[EpisodeLog]) -> Result<()> {
    for log in logs {
        serde_json::to_writer(&mut out, log)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<EpisodeLog>> {
    let mut logs = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        logs.push(serde_json::from_str(&line)?);
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::expert::expert_action;

    #[test]
    fn jsonl_round_trip_and_replay() {
        let cfg = SimConfig::object_nav(6, 3, 4, 80);
        let mut logs = Vec::new();
        for seed in 0..3 {
            let ep = make_episode(seed, &cfg).unwrap();
            let mut s = SimState::new(&ep).unwrap();
            let mut actions = Vec::new();
            while !s.done {
                let a = expert_action(&s).unwrap();
                actions.push(a);
                s.apply(a).unwrap();
            }
            logs.push(EpisodeLog {
                seed,
                config: cfg.clone(),
                task: ep.task.clone(),
                actions,
                success: s.success,
                spl: 1.0,
                path_length: s.path_length,
            });
        }
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &logs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().all(|l| l.starts_with("{\"seed\":")));
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, logs);
        for log in &back {
            let s = log.replay().unwrap();
            assert_eq!(s.success, log.success);
            assert_eq!(s.path_length, log.path_length);
        }
    }
}
