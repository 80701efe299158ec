/// Generalized advantage estimates for one worker's sequence.
///
/// `dones[t]` marks that step `t` ended its episode, so nothing after it is
/// bootstrapped into step `t`. `last_value` is the value of the state following
/// the final step. Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae_returns(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let keep = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * keep - values[t];
        next_adv = delta + gamma * lambda * keep * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}
