use super::*;
use crate::nn::log_softmax;

fn mini(arch: Architecture) -> AgentConfig {
    AgentConfig {
        arch,
        channels: 4,
        spatial: 3,
        actions: 5,
        hidden: 8,
        layers: if arch == Architecture::Habitat { 2 } else { 1 },
        compress: 3,
        goal_dim: 4,
        goal_count: 3,
        goal_mode: GoalMode::Category,
        action_dim: 3,
        mask_channels: 5,
        embed: 6,
        fusion_scale: None,
    }
}

fn det_vec(n: usize, salt: u64) -> Vec<f64> {
    let mut rng = SeedStream::new(salt).rng();
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn input_for(cfg: &AgentConfig, t: u64) -> AgentInput {
    let n = cfg.channels * cfg.spatial * cfg.spatial;
    let prev = if t == 0 { None } else { Some(t as usize % cfg.actions) };
    match cfg.arch {
        Architecture::ObjectNav => AgentInput {
            visual: Visual::Map(det_vec(n, t)),
            goal: GoalInput::Category(t as usize % cfg.goal_count),
            prev_action: prev,
        },
        Architecture::Rearrange => AgentInput {
            visual: Visual::Pair(det_vec(n, t), det_vec(n, 100 + t)),
            goal: GoalInput::None,
            prev_action: prev,
        },
        Architecture::Habitat => {
            let goal = match cfg.goal_mode {
                GoalMode::Category => GoalInput::Category(t as usize % cfg.goal_count),
                GoalMode::Polar => GoalInput::Polar([1.0 + t as f64 * 0.3, 0.2 - t as f64 * 0.1]),
            };
            AgentInput { visual: Visual::Map(det_vec(n, t)), goal, prev_action: prev }
        }
        Architecture::ZeroShot => AgentInput {
            visual: Visual::Vector(det_vec(cfg.embed, t)),
            goal: GoalInput::Text(det_vec(cfg.embed, 50 + t % 2)),
            prev_action: prev,
        },
    }
}

/// Actor cross-entropy plus critic squared error summed over the sequence.
fn seq_loss(agent: &Agent, inputs: &[AgentInput], resets: &[bool], targets: &[usize], returns: &[f64]) -> f64 {
    let (outs, _) = agent.forward_seq(inputs, resets, &agent.initial_hidden()).unwrap();
    outs.iter()
        .zip(targets.iter().zip(returns))
        .map(|(o, (&a, &r))| -log_softmax(&o.logits)[a] + (o.value - r).powi(2))
        .sum()
}

/// Nonzero biases keep ReLU units off their kink at exactly zero.
fn randomize_biases(agent: &mut Agent) {
    for (i, id) in agent.params.ids().collect::<Vec<_>>().into_iter().enumerate() {
        if agent.params.name(id).contains("bias") {
            let n = agent.params.get(id).len();
            agent.params.get_mut(id).copy_from_slice(&det_vec(n, 40 + i as u64));
        }
    }
}

fn gradient_check(cfg: AgentConfig) {
    let mut agent = Agent::new(&cfg, 3).unwrap();
    randomize_biases(&mut agent);
    let inputs: Vec<AgentInput> = (0..4).map(|t| input_for(&cfg, t)).collect();
    let resets = [true, false, true, false];
    let targets = [0, 3, 1, 4];
    let returns = [0.5, -0.2, 1.0, 0.3];
    let (outs, caches) = agent.forward_seq(&inputs, &resets, &agent.initial_hidden()).unwrap();
    let d_logits: Vec<Vec<f64>> = outs
        .iter()
        .zip(&targets)
        .map(|(o, &a)| {
            let mut p = o.probs();
            p[a] -= 1.0;
            p
        })
        .collect();
    let d_values: Vec<f64> = outs.iter().zip(&returns).map(|(o, r)| 2.0 * (o.value - r)).collect();
    let mut grads = agent.grads();
    agent.backward_seq(&caches, &resets, &d_logits, &d_values, &mut grads);

    let eps = 1e-6;
    let mut checked = 0;
    for id in agent.params.ids().collect::<Vec<_>>() {
        for k in 0..agent.params.get(id).len() {
            let orig = agent.params.get(id)[k];
            agent.params.get_mut(id)[k] = orig + eps;
            let lp = seq_loss(&agent, &inputs, &resets, &targets, &returns);
            agent.params.get_mut(id)[k] = orig - eps;
            let lm = seq_loss(&agent, &inputs, &resets, &targets, &returns);
            agent.params.get_mut(id)[k] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = grads.get(id)[k];
            let scale = numeric.abs().max(analytic.abs());
            assert!(
                (numeric - analytic).abs() <= 1e-4 * scale + 1e-8,
                "{:?} {}[{k}]: analytic {analytic} numeric {numeric}",
                cfg.arch,
                agent.params.name(id)
            );
            checked += 1;
        }
    }
    assert_eq!(checked, agent.param_count());
}

#[test]
fn gradients_objectnav() {
    gradient_check(mini(Architecture::ObjectNav));
}

#[test]
fn gradients_rearrange() {
    gradient_check(mini(Architecture::Rearrange));
}

#[test]
fn gradients_habitat_category_and_polar() {
    gradient_check(mini(Architecture::Habitat));
    gradient_check(AgentConfig { goal_mode: GoalMode::Polar, ..mini(Architecture::Habitat) });
}

#[test]
fn gradients_zeroshot() {
    gradient_check(mini(Architecture::ZeroShot));
}

#[test]
fn stepwise_equals_sequence() {
    for arch in [Architecture::ObjectNav, Architecture::Rearrange, Architecture::Habitat, Architecture::ZeroShot] {
        let cfg = mini(arch);
        let agent = Agent::new(&cfg, 1).unwrap();
        let inputs: Vec<AgentInput> = (0..6).map(|t| input_for(&cfg, t)).collect();
        let resets = [true, false, false, true, false, false];
        let (seq, _) = agent.forward_seq(&inputs, &resets, &agent.initial_hidden()).unwrap();
        let mut h = agent.initial_hidden();
        for (t, x) in inputs.iter().enumerate() {
            if resets[t] {
                h.reset();
            }
            let o = agent.forward(x, &h).unwrap();
            for (a, b) in o.logits.iter().zip(&seq[t].logits) {
                assert!((a - b).abs() < 1e-5);
            }
            assert!((o.value - seq[t].value).abs() < 1e-5);
            h = o.hidden;
        }
    }
}

#[test]
fn reset_discards_previous_episode() {
    let cfg = mini(Architecture::ObjectNav);
    let agent = Agent::new(&cfg, 1).unwrap();
    let x = input_for(&cfg, 2);
    let mut dirty = agent.initial_hidden();
    dirty.data = det_vec(dirty.data.len(), 9);
    let (a, _) = agent.forward_seq(std::slice::from_ref(&x), &[true], &dirty).unwrap();
    let b = agent.forward(&x, &agent.initial_hidden()).unwrap();
    assert_eq!(a[0], b);
}

#[test]
fn outputs_are_distributions() {
    for arch in [Architecture::ObjectNav, Architecture::Rearrange, Architecture::Habitat, Architecture::ZeroShot] {
        let cfg = mini(arch);
        let agent = Agent::new(&cfg, 4).unwrap();
        let o = agent.forward(&input_for(&cfg, 1), &agent.initial_hidden()).unwrap();
        assert_eq!(o.logits.len(), cfg.actions);
        assert!((o.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn wrong_shapes_are_errors() {
    let cfg = mini(Architecture::ObjectNav);
    let agent = Agent::new(&cfg, 0).unwrap();
    let bad = AgentInput { visual: Visual::Map(vec![0.0; 5]), goal: GoalInput::Category(0), prev_action: None };
    assert!(matches!(agent.forward(&bad, &agent.initial_hidden()), Err(Error::Shape { .. })));
    let wrong_goal = AgentInput { goal: GoalInput::Category(3), ..input_for(&cfg, 0) };
    assert!(agent.forward(&wrong_goal, &agent.initial_hidden()).is_err());
    assert!(agent.forward(&input_for(&cfg, 0), &HiddenState::zeros(2, 8)).is_err());
}

/// Independent loop-by-loop forward of the ObjectNav head for a 2-channel,
/// 2x2 miniature, reading weights by name.
#[test]
fn objectnav_matches_hand_propagation() {
    let cfg = AgentConfig {
        channels: 2,
        spatial: 2,
        compress: 2,
        goal_dim: 2,
        goal_count: 2,
        hidden: 3,
        actions: 6,
        ..mini(Architecture::ObjectNav)
    };
    let mut agent = Agent::new(&cfg, 0).unwrap();
    // Nonzero biases so the zero-feature case exercises every layer.
    randomize_biases(&mut agent);
    let w = |name: &str| agent.params.get(agent.params.find(name).unwrap()).to_vec();
    let conv = |x: &[Vec<f64>], wname: &str, out: usize| -> Vec<Vec<f64>> {
        let (wt, b) = (w(&format!("{wname}.weight")), w(&format!("{wname}.bias")));
        let inp = x.len();
        (0..out)
            .map(|o| {
                (0..4).map(|p| (b[o] + (0..inp).map(|c| wt[o * inp + c] * x[c][p]).sum::<f64>()).max(0.0)).collect()
            })
            .collect()
    };
    let x = vec![vec![0.0; 4]; 2];
    let goal = 1;
    let i1 = conv(&conv(&x, "front.compress.0", 2), "front.compress.1", 2);
    let g = w("front.goal_embed.weight");
    let mut stacked = i1.clone();
    stacked.push(vec![g[goal * 2]; 4]);
    stacked.push(vec![g[goal * 2 + 1]; 4]);
    let v = conv(&conv(&stacked, "front.fuse.0", 2), "front.fuse.1", 2);
    let flat: Vec<f64> = v.concat();
    assert_eq!(flat.len(), 8);
    let (wih, bih, bhh) = (w("gru.l0.weight_ih"), w("gru.l0.bias_ih"), w("gru.l0.bias_hh"));
    let sig = |a: f64| 1.0 / (1.0 + (-a).exp());
    let gi = |row: usize| bih[row] + (0..8).map(|k| wih[row * 8 + k] * flat[k]).sum::<f64>();
    // Zero hidden: W_hh h vanishes, leaving only hidden biases.
    let h: Vec<f64> = (0..3)
        .map(|j| {
            let r = sig(gi(j) + bhh[j]);
            let z = sig(gi(3 + j) + bhh[3 + j]);
            let n = (gi(6 + j) + r * bhh[6 + j]).tanh();
            (1.0 - z) * n
        })
        .collect();
    let (wa, ba) = (w("actor.weight"), w("actor.bias"));
    let logits: Vec<f64> = (0..6).map(|a| ba[a] + (0..3).map(|j| wa[a * 3 + j] * h[j]).sum::<f64>()).collect();
    let (wc, bc) = (w("critic.weight"), w("critic.bias"));
    let value = bc[0] + (0..3).map(|j| wc[j] * h[j]).sum::<f64>();

    let input = AgentInput { visual: Visual::Map(vec![0.0; 8]), goal: GoalInput::Category(goal), prev_action: None };
    let out = agent.forward(&input, &agent.initial_hidden()).unwrap();
    for (a, b) in out.logits.iter().zip(&logits) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((out.value - value).abs() < 1e-12);
    assert_eq!(agent.embed_input(&input).unwrap(), flat);
}

#[test]
fn rearrange_attention_is_normalized_and_identical_views_square() {
    let cfg = mini(Architecture::Rearrange);
    let agent = Agent::new(&cfg, 2).unwrap();
    let f = det_vec(36, 7);
    let input = AgentInput { visual: Visual::Pair(f.clone(), f.clone()), goal: GoalInput::None, prev_action: None };
    let (out, cache) = agent.forward_cached(&input, &agent.initial_hidden()).unwrap();
    assert!(out.logits.iter().all(|v| v.is_finite()));
    let FrontCache::Rearrange { s, attn, .. } = &cache.front else { panic!("wrong cache") };
    assert_eq!(s.len(), 3 * 36);
    for (i, v) in f.iter().enumerate() {
        assert_eq!(s[72 + i], v * v);
    }
    for ch in 0..cfg.mask_channels {
        let sum: f64 = attn[ch * 9..(ch + 1) * 9].iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn habitat_constant_map_pools_to_constants() {
    let cfg = mini(Architecture::Habitat);
    let agent = Agent::new(&cfg, 2).unwrap();
    let map: Vec<f64> = (0..4).flat_map(|c| vec![c as f64 * 0.5; 9]).collect();
    let x = agent
        .embed_input(&AgentInput { visual: Visual::Map(map), goal: GoalInput::Category(1), prev_action: Some(2) })
        .unwrap();
    assert_eq!(x.len(), cfg.goal_dim + cfg.channels + cfg.action_dim);
    for c in 0..4 {
        assert!((x[cfg.goal_dim + c] - c as f64 * 0.5).abs() < 1e-12);
    }
}

#[test]
fn zeroshot_is_goal_sensitive() {
    let cfg = mini(Architecture::ZeroShot);
    let agent = Agent::new(&cfg, 2).unwrap();
    let v = det_vec(6, 1);
    let a = AgentInput { visual: Visual::Vector(v.clone()), goal: GoalInput::Text(det_vec(6, 2)), prev_action: None };
    let b = AgentInput { goal: GoalInput::Text(det_vec(6, 3)), ..a.clone() };
    let h = agent.initial_hidden();
    assert_ne!(agent.forward(&a, &h).unwrap().logits, agent.forward(&b, &h).unwrap().logits);
}

#[test]
fn act_modes() {
    let mut rng = SeedStream::new(0).rng();
    let mk = |logits: Vec<f64>| PolicyOutput { logits, value: 0.0, hidden: HiddenState::zeros(1, 1) };
    let one_hot = mk(vec![-1e9, -1e9, 0.0, -1e9]);
    assert_eq!(act(&one_hot, ActMode::Argmax, &mut rng), 2);
    assert_eq!(act(&one_hot, ActMode::Sample, &mut rng), 2);
    assert_eq!(act(&mk(vec![0.3; 6]), ActMode::Argmax, &mut rng), 0);
    let shifted = mk(vec![0.1 + 7.0, 0.9 + 7.0, 0.5 + 7.0]);
    assert_eq!(act(&shifted, ActMode::Argmax, &mut rng), act(&mk(vec![0.1, 0.9, 0.5]), ActMode::Argmax, &mut rng));
}

#[test]
fn sampling_matches_softmax() {
    let out = PolicyOutput { logits: vec![0.2, -1.0, 1.3, 0.0], value: 0.0, hidden: HiddenState::zeros(1, 1) };
    let p = out.probs();
    let mut rng = SeedStream::new(11).rng();
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[act(&out, ActMode::Sample, &mut rng)] += 1;
    }
    for i in 0..4 {
        let sigma = (n as f64 * p[i] * (1.0 - p[i])).sqrt();
        assert!(
            (counts[i] as f64 - n as f64 * p[i]).abs() < 3.0 * sigma,
            "action {i}: {} vs {}",
            counts[i],
            n as f64 * p[i]
        );
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini(Architecture::Habitat);
    let agent = Agent::new(&cfg, 5).unwrap();
    agent.save(dir.path(), 1234).unwrap();
    let (back, step) = Agent::load(dir.path()).unwrap();
    assert_eq!(step, 1234);
    assert_eq!(back.params.hash(), agent.params.hash());
    assert_eq!(back, agent);
    assert!(Agent::load_expecting(dir.path(), Architecture::ObjectNav, 5).is_err());
}

#[test]
fn full_size_shapes() {
    let cfg = AgentConfig::objectnav_full();
    let agent = Agent::new(&cfg, 0).unwrap();
    let input =
        AgentInput { visual: Visual::Map(vec![0.1; 2048 * 49]), goal: GoalInput::Category(11), prev_action: None };
    assert_eq!(agent.embed_input(&input).unwrap().len(), 1568);
    let out = agent.forward(&input, &agent.initial_hidden()).unwrap();
    assert_eq!((out.logits.len(), out.hidden.data.len()), (6, 512));
    let shape = |a: &Agent, n: &str| a.params.shape(a.params.find(n).unwrap()).to_vec();
    assert_eq!(shape(&agent, "front.compress.1.weight"), vec![32, 32, 1, 1]);

    let r = Agent::new(&AgentConfig::rearrange_full(20), 0).unwrap();
    assert_eq!(shape(&r, "front.attn_mask.weight"), vec![512, 6144, 1, 1]);
    assert_eq!(r.config.gru_input(), 512);

    let h = Agent::new(&AgentConfig::habitat_full(GoalMode::Category, 6), 0).unwrap();
    assert_eq!(h.config.gru_input(), 32 + 2048 + 32);
    assert_eq!(h.initial_hidden().data.len(), 2 * 512);

    let z = Agent::new(&AgentConfig::zeroshot_full(), 0).unwrap();
    let gru = 3 * 1024 * (1024 + 1024) + 6 * 1024;
    assert_eq!(z.param_count(), gru + 1024 * 6 + 6 + 1024 + 1);
    assert_eq!(z.param_count(), 6_304_775);
}
