use super::{Grads, ParamStore};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Grads,
    pub v: Grads,
}

impl Adam {
    pub fn new(ps: &ParamStore, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: ps.zeros_like(), v: ps.zeros_like() }
    }

    pub fn step(&mut self, ps: &mut ParamStore, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in ps.ids().collect::<Vec<_>>() {
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.get_mut(id);
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (self.m.get(id), self.v.get(id));
            let p = ps.get_mut(id);
            for k in 0..p.len() {
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Rescale `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
