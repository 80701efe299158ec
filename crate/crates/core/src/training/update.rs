use serde::{Deserialize, Serialize};

use super::{gae_returns, RolloutBuffer, TrainConfig, WorkerSeq};
use crate::agents::{Agent, AgentInput};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, log_softmax, Adam, Grads};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub steps: usize,
}

impl LossReport {
    fn accumulate(&mut self, other: &LossReport) {
        self.policy += other.policy;
        self.value += other.value;
        self.entropy += other.entropy;
        self.grad_norm += other.grad_norm;
        self.steps += 1;
    }

    fn averaged(mut self) -> Self {
        let n = self.steps.max(1) as f64;
        self.policy /= n;
        self.value /= n;
        self.entropy /= n;
        self.grad_norm /= n;
        self
    }
}

/// Which loss to differentiate.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Objective {
    Ppo { clip_eps: f64, entropy_coef: f64, value_coef: f64 },
    Imitation,
}

fn seq_grads(agent: &Agent, seqs: &[&WorkerSeq], objective: Objective, grads: &mut Grads) -> Result<LossReport> {
    let n: usize = seqs.iter().map(|s| s.steps.len()).sum();
    let inv = 1.0 / n.max(1) as f64;
    let mut rep = LossReport::default();
    for seq in seqs {
        let inputs: Vec<&AgentInput> = seq.steps.iter().map(|s| &s.input).collect();
        let resets: Vec<bool> = seq.steps.iter().map(|s| s.reset).collect();
        let (outs, caches) = agent.forward_seq_refs(&inputs, &resets, &seq.h0)?;
        let mut d_logits = Vec::with_capacity(outs.len());
        let mut d_values = Vec::with_capacity(outs.len());
        for (t, (o, step)) in outs.iter().zip(&seq.steps).enumerate() {
            let logp = log_softmax(&o.logits);
            let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            let entropy: f64 = -p.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
            rep.entropy += entropy * inv;
            let mut dl = vec![0.0; p.len()];
            let mut dv = 0.0;
            match objective {
                Objective::Ppo { clip_eps, entropy_coef, value_coef } => {
                    let adv = seq.advantages[t];
                    let ratio = (logp[step.action] - step.logp).exp();
                    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
                    rep.policy -= (ratio * adv).min(clipped * adv) * inv;
                    if ratio * adv <= clipped * adv {
                        for (j, d) in dl.iter_mut().enumerate() {
                            let e = if j == step.action { 1.0 } else { 0.0 };
                            *d -= adv * ratio * (e - p[j]) * inv;
                        }
                    }
                    for (j, d) in dl.iter_mut().enumerate() {
                        *d += entropy_coef * p[j] * (logp[j] + entropy) * inv;
                    }
                    let err = o.value - seq.returns[t];
                    rep.value += 0.5 * err * err * inv;
                    dv = value_coef * err * inv;
                }
                Objective::Imitation => {
                    let target =
                        step.expert.ok_or_else(|| Error::Config("imitation batch lacks expert labels".into()))?;
                    rep.policy -= logp[target] * inv;
                    for (j, d) in dl.iter_mut().enumerate() {
                        *d = (p[j] - if j == target { 1.0 } else { 0.0 }) * inv;
                    }
                }
            }
            d_logits.push(dl);
            d_values.push(dv);
        }
        agent.backward_seq(&caches, &resets, &d_logits, &d_values, grads);
    }
    if !(rep.policy.is_finite() && rep.value.is_finite() && rep.entropy.is_finite()) {
        return Err(Error::NonFinite(format!(
            "loss policy={} value={} entropy={}",
            rep.policy, rep.value, rep.entropy
        )));
    }
    Ok(rep)
}

/// Loss and gradients of the PPO objective on the given sequences, without
/// updating parameters. Advantages and returns must already be filled in.
pub fn policy_gradients(agent: &Agent, seqs: &[&WorkerSeq], cfg: &TrainConfig) -> Result<(LossReport, Grads)> {
    let mut grads = agent.grads();
    let obj = Objective::Ppo { clip_eps: cfg.clip_eps, entropy_coef: cfg.entropy_coef, value_coef: cfg.value_coef };
    let rep = seq_grads(agent, seqs, obj, &mut grads)?;
    Ok((rep, grads))
}

/// Fill in GAE advantages (normalized over the whole buffer) and returns.
pub fn compute_advantages(buf: &mut RolloutBuffer, cfg: &TrainConfig) {
    for seq in &mut buf.seqs {
        let rewards: Vec<f64> = seq.steps.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = seq.steps.iter().map(|s| s.value).collect();
        let dones: Vec<bool> = seq.steps.iter().map(|s| s.done).collect();
        let (adv, ret) = gae_returns(&rewards, &values, &dones, seq.last_value, cfg.gamma, cfg.gae_lambda);
        seq.advantages = adv;
        seq.returns = ret;
    }
    let all: Vec<f64> = buf.seqs.iter().flat_map(|s| s.advantages.iter().copied()).collect();
    let n = all.len().max(1) as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for seq in &mut buf.seqs {
        seq.advantages.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
    }
}

/// Worker indices of each minibatch; whole sequences keep their order.
fn minibatches(workers: usize, count: usize) -> Vec<Vec<usize>> {
    let count = count.clamp(1, workers.max(1));
    (0..count).map(|m| (0..workers).filter(|w| w % count == m).collect()).collect()
}

fn run_updates(
    agent: &mut Agent,
    opt: &mut Adam,
    buf: &RolloutBuffer,
    cfg: &TrainConfig,
    objective: Objective,
) -> Result<LossReport> {
    let mut total = LossReport::default();
    for _ in 0..cfg.epochs {
        for mb in minibatches(buf.seqs.len(), cfg.minibatches) {
            let seqs: Vec<&WorkerSeq> = mb.iter().map(|&i| &buf.seqs[i]).collect();
            let mut grads = agent.grads();
            let mut rep = seq_grads(agent, &seqs, objective, &mut grads)?;
            rep.grad_norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
            opt.step(&mut agent.params, &grads);
            if !agent.params.all_finite() {
                return Err(Error::NonFinite("parameters after update".into()));
            }
            total.accumulate(&rep);
        }
    }
    Ok(total.averaged())
}

/// Clipped-surrogate PPO with value loss and entropy bonus. Computes advantages first.
pub fn ppo_update(agent: &mut Agent, opt: &mut Adam, buf: &mut RolloutBuffer, cfg: &TrainConfig) -> Result<LossReport> {
    compute_advantages(buf, cfg);
    let obj = Objective::Ppo { clip_eps: cfg.clip_eps, entropy_coef: cfg.entropy_coef, value_coef: cfg.value_coef };
    run_updates(agent, opt, buf, cfg, obj)
}

/// Cross-entropy to the expert labels with teacher-forced recurrent unrolling.
pub fn imitation_update(
    agent: &mut Agent,
    opt: &mut Adam,
    buf: &RolloutBuffer,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    run_updates(agent, opt, buf, cfg, Objective::Imitation)
}

/// Imitation loss on a batch without updating.
pub fn imitation_loss(agent: &Agent, seqs: &[&WorkerSeq]) -> Result<f64> {
    let mut grads = agent.grads();
    Ok(seq_grads(agent, seqs, Objective::Imitation, &mut grads)?.policy)
}
