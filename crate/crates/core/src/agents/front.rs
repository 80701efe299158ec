//! Architecture-specific input stages that turn frozen features and goals into
//! the GRU input vector.

use super::{AgentConfig, AgentInput, Architecture, GoalInput, GoalMode, Visual};
use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, softmax, Conv1x1, Embedding, Grads, Linear, ParamStore};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Front {
    /// Two 1x1-conv CNNs around a tiled goal embedding, flattened.
    ObjectNav { compress: [Conv1x1; 2], goal: Embedding, fuse: [Conv1x1; 2] },
    /// Stacked views, attention-mask and value 1x1 convs, attention-weighted pooling.
    Rearrange { mask: Conv1x1, value: Conv1x1 },
    /// Average-pooled features concatenated with goal and previous-action encodings.
    Habitat { goal: HabitatGoal, action: Embedding },
    /// Frozen fusion of visual and text embeddings.
    ZeroShot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum HabitatGoal {
    Category(Embedding),
    Polar(Linear),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum FrontCache {
    ObjectNav {
        x: Vec<f64>,
        a1: Vec<f64>,
        compressed: Vec<f64>,
        goal: usize,
        stacked: Vec<f64>,
        b1: Vec<f64>,
        out: Vec<f64>,
    },
    Rearrange {
        s: Vec<f64>,
        attn: Vec<f64>,
        value: Vec<f64>,
    },
    Habitat {
        goal: GoalInput,
        prev_action: usize,
    },
    ZeroShot,
}

fn shape_err(what: &str, expected: usize, got: usize) -> Error {
    Error::Shape { expected: format!("{what} of length {expected}"), got: format!("{got}") }
}

impl Front {
    pub(crate) fn new(cfg: &AgentConfig, ps: &mut ParamStore, rng: &mut Rng) -> Self {
        match cfg.arch {
            Architecture::ObjectNav => Front::ObjectNav {
                compress: [
                    Conv1x1::new(ps, "front.compress.0", cfg.channels, cfg.compress, rng),
                    Conv1x1::new(ps, "front.compress.1", cfg.compress, cfg.compress, rng),
                ],
                goal: Embedding::new(ps, "front.goal_embed", cfg.goal_count, cfg.goal_dim, rng),
                fuse: [
                    Conv1x1::new(ps, "front.fuse.0", cfg.compress + cfg.goal_dim, cfg.compress, rng),
                    Conv1x1::new(ps, "front.fuse.1", cfg.compress, cfg.compress, rng),
                ],
            },
            Architecture::Rearrange => Front::Rearrange {
                mask: Conv1x1::new(ps, "front.attn_mask", 3 * cfg.channels, cfg.mask_channels, rng),
                value: Conv1x1::new(ps, "front.value", 3 * cfg.channels, cfg.mask_channels, rng),
            },
            Architecture::Habitat => Front::Habitat {
                goal: match cfg.goal_mode {
                    GoalMode::Category => {
                        HabitatGoal::Category(Embedding::new(ps, "front.goal_embed", cfg.goal_count, cfg.goal_dim, rng))
                    }
                    GoalMode::Polar => HabitatGoal::Polar(Linear::new(ps, "front.goal_polar", 2, cfg.goal_dim, rng)),
                },
                action: Embedding::new(ps, "front.prev_action_embed", cfg.actions + 1, cfg.action_dim, rng),
            },
            Architecture::ZeroShot => Front::ZeroShot,
        }
    }

    pub(crate) fn forward(
        &self,
        cfg: &AgentConfig,
        ps: &ParamStore,
        input: &AgentInput,
    ) -> Result<(Vec<f64>, FrontCache)> {
        let p = cfg.spatial * cfg.spatial;
        let map_len = cfg.channels * p;
        match self {
            Front::ObjectNav { compress, goal, fuse } => {
                let Visual::Map(x) = &input.visual else {
                    return Err(Error::Shape { expected: "a feature map".into(), got: "another visual input".into() });
                };
                if x.len() != map_len {
                    return Err(shape_err("feature map", map_len, x.len()));
                }
                let GoalInput::Category(g) = input.goal else {
                    return Err(Error::Config("objectnav agent needs a category goal".into()));
                };
                let gv = goal.lookup(ps, g)?;
                let mut a1 = compress[0].forward(ps, x, p);
                relu(&mut a1);
                let mut compressed = compress[1].forward(ps, &a1, p);
                relu(&mut compressed);
                let mut stacked = compressed.clone();
                for v in &gv {
                    stacked.extend(std::iter::repeat_n(*v, p));
                }
                let mut b1 = fuse[0].forward(ps, &stacked, p);
                relu(&mut b1);
                let mut out = fuse[1].forward(ps, &b1, p);
                relu(&mut out);
                let cache =
                    FrontCache::ObjectNav { x: x.clone(), a1, compressed, goal: g, stacked, b1, out: out.clone() };
                Ok((out, cache))
            }
            Front::Rearrange { mask, value } => {
                let Visual::Pair(f1, f2) = &input.visual else {
                    return Err(Error::Shape {
                        expected: "a pair of feature maps".into(),
                        got: "another visual input".into(),
                    });
                };
                if f1.len() != map_len || f2.len() != map_len {
                    return Err(shape_err("feature map pair", map_len, f1.len().max(f2.len())));
                }
                let mut s = Vec::with_capacity(3 * map_len);
                s.extend_from_slice(f1);
                s.extend_from_slice(f2);
                s.extend(f1.iter().zip(f2).map(|(a, b)| a * b));
                let logits = mask.forward(ps, &s, p);
                let mut v = value.forward(ps, &s, p);
                relu(&mut v);
                let m = cfg.mask_channels;
                let mut attn = Vec::with_capacity(m * p);
                let mut pooled = vec![0.0; m];
                for ch in 0..m {
                    let a = softmax(&logits[ch * p..(ch + 1) * p]);
                    pooled[ch] = a.iter().zip(&v[ch * p..(ch + 1) * p]).map(|(w, x)| w * x).sum();
                    attn.extend(a);
                }
                Ok((pooled, FrontCache::Rearrange { s, attn, value: v }))
            }
            Front::Habitat { goal, action } => {
                let pooled = match &input.visual {
                    Visual::Map(x) if x.len() == map_len => (0..cfg.channels)
                        .map(|c| x[c * p..(c + 1) * p].iter().sum::<f64>() / p as f64)
                        .collect::<Vec<_>>(),
                    Visual::Vector(v) if v.len() == cfg.channels => v.clone(),
                    Visual::Map(x) | Visual::Vector(x) => {
                        return Err(shape_err("habitat visual input", map_len, x.len()))
                    }
                    Visual::Pair(..) => {
                        return Err(Error::Shape { expected: "a feature map".into(), got: "a pair".into() })
                    }
                };
                let gv = match (goal, &input.goal) {
                    (HabitatGoal::Category(t), GoalInput::Category(g)) => t.lookup(ps, *g)?,
                    (HabitatGoal::Polar(l), GoalInput::Polar(c)) => crate::encoders::goal_embed_polar(*c, l, ps)?,
                    _ => return Err(Error::Config("goal input does not match the habitat goal mode".into())),
                };
                let a = prev_index(input.prev_action, cfg.actions)?;
                let av = action.lookup(ps, a)?;
                let mut x = gv;
                x.extend(pooled);
                x.extend(av);
                Ok((x, FrontCache::Habitat { goal: input.goal.clone(), prev_action: a }))
            }
            Front::ZeroShot => {
                let (Visual::Vector(v), GoalInput::Text(t)) = (&input.visual, &input.goal) else {
                    return Err(Error::Config("zero-shot agent needs a pooled visual vector and a text goal".into()));
                };
                if v.len() != cfg.embed || t.len() != cfg.embed {
                    return Err(shape_err(
                        "zero-shot embedding",
                        cfg.embed,
                        if v.len() != cfg.embed { v.len() } else { t.len() },
                    ));
                }
                Ok((fuse_product(v, t, cfg.fusion_scale()), FrontCache::ZeroShot))
            }
        }
    }

    /// Accumulate front gradients given the gradient on the GRU input.
    pub(crate) fn backward(
        &self,
        cfg: &AgentConfig,
        ps: &ParamStore,
        cache: &FrontCache,
        dx: &[f64],
        grads: &mut Grads,
    ) {
        let p = cfg.spatial * cfg.spatial;
        match (self, cache) {
            (
                Front::ObjectNav { compress, goal, fuse },
                FrontCache::ObjectNav { x, a1, compressed, goal: g, stacked, b1, out },
            ) => {
                let mut d_out = dx.to_vec();
                relu_backward(out, &mut d_out);
                let mut d_b1 = vec![0.0; b1.len()];
                fuse[1].backward(ps, b1, p, &d_out, grads, Some(&mut d_b1));
                relu_backward(b1, &mut d_b1);
                let mut d_stacked = vec![0.0; stacked.len()];
                fuse[0].backward(ps, stacked, p, &d_b1, grads, Some(&mut d_stacked));
                let split = cfg.compress * p;
                let d_goal: Vec<f64> = d_stacked[split..].chunks(p).map(|c| c.iter().sum()).collect();
                goal.backward(*g, &d_goal, grads);
                let mut d_comp = d_stacked[..split].to_vec();
                relu_backward(compressed, &mut d_comp);
                let mut d_a1 = vec![0.0; a1.len()];
                compress[1].backward(ps, a1, p, &d_comp, grads, Some(&mut d_a1));
                relu_backward(a1, &mut d_a1);
                compress[0].backward(ps, x, p, &d_a1, grads, None);
            }
            (Front::Rearrange { mask, value }, FrontCache::Rearrange { s, attn, value: v }) => {
                let m = cfg.mask_channels;
                let mut d_logits = vec![0.0; m * p];
                let mut d_v = vec![0.0; m * p];
                for ch in 0..m {
                    let r = ch * p..(ch + 1) * p;
                    let (a, vv) = (&attn[r.clone()], &v[r.clone()]);
                    let pooled: f64 = a.iter().zip(vv).map(|(w, x)| w * x).sum();
                    for i in 0..p {
                        d_v[ch * p + i] = dx[ch] * a[i];
                        d_logits[ch * p + i] = dx[ch] * a[i] * (vv[i] - pooled);
                    }
                }
                relu_backward(v, &mut d_v);
                value.backward(ps, s, p, &d_v, grads, None);
                mask.backward(ps, s, p, &d_logits, grads, None);
            }
            (Front::Habitat { goal, action }, FrontCache::Habitat { goal: gi, prev_action }) => {
                let gd = cfg.goal_dim;
                match (goal, gi) {
                    (HabitatGoal::Category(t), GoalInput::Category(g)) => t.backward(*g, &dx[..gd], grads),
                    (HabitatGoal::Polar(l), GoalInput::Polar(c)) => l.backward(ps, c, &dx[..gd], grads, None),
                    _ => unreachable!("goal mode checked in forward"),
                }
                action.backward(*prev_action, &dx[gd + cfg.channels..], grads);
            }
            (Front::ZeroShot, FrontCache::ZeroShot) => {}
            _ => unreachable!("cache produced by a different front"),
        }
    }

    pub(crate) fn output_dim(cfg: &AgentConfig) -> usize {
        match cfg.arch {
            Architecture::ObjectNav => cfg.compress * cfg.spatial * cfg.spatial,
            Architecture::Rearrange => cfg.mask_channels,
            Architecture::Habitat => cfg.goal_dim + cfg.channels + cfg.action_dim,
            Architecture::ZeroShot => cfg.embed,
        }
    }
}

fn prev_index(prev: Option<usize>, actions: usize) -> Result<usize> {
    match prev {
        None => Ok(actions),
        Some(a) if a < actions => Ok(a),
        Some(a) => Err(Error::OutOfRange { index: a, limit: actions }),
    }
}

/// `scale * (v/|v| ⊙ t/|t|)`.
pub fn fuse_product(v: &[f64], t: &[f64], scale: f64) -> Vec<f64> {
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nt = t.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().zip(t).map(|(a, b)| scale * (a / nv) * (b / nt)).collect()
}
