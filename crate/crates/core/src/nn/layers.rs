use super::{fan_in_uniform, orthogonal, sigmoid, uniform, Grads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `out += W x` for row-major `W` of shape rows x cols.
#[inline]
pub fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx += W^T dy`.
#[inline]
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    for r in 0..rows {
        let g = dy[r];
        if g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        dx.iter_mut().zip(row).for_each(|(d, a)| *d += g * a);
    }
}

/// `G += dy x^T`.
#[inline]
pub fn outer_acc(g: &mut [f64], cols: usize, dy: &[f64], x: &[f64]) {
    for (r, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        row.iter_mut().zip(x).for_each(|(a, b)| *a += d * b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    /// Fan-in scaled weights and zero bias.
    pub fn new(ps: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut Rng) -> Self {
        let w = fan_in_uniform(rng, out, inp);
        Self::from_weights(ps, name, inp, out, w)
    }

    pub fn from_weights(ps: &mut ParamStore, name: &str, inp: usize, out: usize, w: Vec<f64>) -> Self {
        let w = ps.add(format!("{name}.weight"), &[out, inp], w);
        let b = ps.add(format!("{name}.bias"), &[out], vec![0.0; out]);
        Linear { w, b, inp, out }
    }

    pub fn forward(&self, ps: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut y = ps.get(self.b).to_vec();
        matvec_acc(ps.get(self.w), self.out, self.inp, x, &mut y);
        y
    }

    /// Accumulate parameter gradients; add the input gradient to `dx` if given.
    pub fn backward(&self, ps: &ParamStore, x: &[f64], dy: &[f64], grads: &mut Grads, dx: Option<&mut [f64]>) {
        outer_acc(grads.get_mut(self.w), self.inp, dy, x);
        grads.get_mut(self.b).iter_mut().zip(dy).for_each(|(g, d)| *g += d);
        if let Some(dx) = dx {
            matvec_t_acc(ps.get(self.w), self.out, self.inp, dy, dx);
        }
    }

    pub fn param_count(&self) -> usize {
        self.inp * self.out + self.out
    }
}

/// 1x1 convolution over a channel-major `C x P` map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv1x1 {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Conv1x1 {
    pub fn new(ps: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut Rng) -> Self {
        let w = fan_in_uniform(rng, out, inp);
        let w = ps.add(format!("{name}.weight"), &[out, inp, 1, 1], w);
        let b = ps.add(format!("{name}.bias"), &[out], vec![0.0; out]);
        Conv1x1 { w, b, inp, out }
    }

    pub fn forward(&self, ps: &ParamStore, x: &[f64], positions: usize) -> Vec<f64> {
        let w = ps.get(self.w);
        let b = ps.get(self.b);
        let mut y = vec![0.0; self.out * positions];
        for o in 0..self.out {
            let yo = &mut y[o * positions..(o + 1) * positions];
            yo.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..self.inp {
                let wc = w[o * self.inp + c];
                if wc == 0.0 {
                    continue;
                }
                let xc = &x[c * positions..(c + 1) * positions];
                yo.iter_mut().zip(xc).for_each(|(v, xv)| *v += wc * xv);
            }
        }
        y
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        x: &[f64],
        positions: usize,
        dy: &[f64],
        grads: &mut Grads,
        dx: Option<&mut [f64]>,
    ) {
        {
            let gw = grads.get_mut(self.w);
            for o in 0..self.out {
                let dyo = &dy[o * positions..(o + 1) * positions];
                for c in 0..self.inp {
                    let xc = &x[c * positions..(c + 1) * positions];
                    gw[o * self.inp + c] += dyo.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        {
            let gb = grads.get_mut(self.b);
            for o in 0..self.out {
                gb[o] += dy[o * positions..(o + 1) * positions].iter().sum::<f64>();
            }
        }
        if let Some(dx) = dx {
            let w = ps.get(self.w);
            for o in 0..self.out {
                let dyo = &dy[o * positions..(o + 1) * positions];
                for c in 0..self.inp {
                    let wc = w[o * self.inp + c];
                    let dxc = &mut dx[c * positions..(c + 1) * positions];
                    dxc.iter_mut().zip(dyo).for_each(|(d, g)| *d += wc * g);
                }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.inp * self.out + self.out
    }
}

/// Trainable lookup table, initialized uniform(-0.1, 0.1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(ps: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut Rng) -> Self {
        let table = ps.add(format!("{name}.weight"), &[rows, dim], uniform(rng, rows * dim, 0.1));
        Embedding { table, rows, dim }
    }

    pub fn lookup(&self, ps: &ParamStore, index: usize) -> Result<Vec<f64>> {
        if index >= self.rows {
            return Err(Error::OutOfRange { index, limit: self.rows });
        }
        Ok(ps.get(self.table)[index * self.dim..(index + 1) * self.dim].to_vec())
    }

    pub fn backward(&self, index: usize, dy: &[f64], grads: &mut Grads) {
        let g = &mut grads.get_mut(self.table)[index * self.dim..(index + 1) * self.dim];
        g.iter_mut().zip(dy).for_each(|(a, b)| *a += b);
    }
}

/// Single GRU layer with the r, z, n gate order and separate input/hidden biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub inp: usize,
    pub hid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruCache {
    x: Vec<f64>,
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// Hidden-side pre-activation of the candidate gate, W_hn h + b_hn.
    ghn: Vec<f64>,
}

impl Gru {
    /// Fan-in scaled input weights, orthogonal recurrent blocks, zero biases.
    pub fn new(ps: &mut ParamStore, name: &str, inp: usize, hid: usize, rng: &mut Rng) -> Self {
        let w_ih = fan_in_uniform(rng, 3 * hid, inp);
        let mut w_hh = Vec::with_capacity(3 * hid * hid);
        for _ in 0..3 {
            w_hh.extend(orthogonal(rng, hid));
        }
        let w_ih = ps.add(format!("{name}.weight_ih"), &[3 * hid, inp], w_ih);
        let w_hh = ps.add(format!("{name}.weight_hh"), &[3 * hid, hid], w_hh);
        let b_ih = ps.add(format!("{name}.bias_ih"), &[3 * hid], vec![0.0; 3 * hid]);
        let b_hh = ps.add(format!("{name}.bias_hh"), &[3 * hid], vec![0.0; 3 * hid]);
        Gru { w_ih, w_hh, b_ih, b_hh, inp, hid }
    }

    pub fn param_count(&self) -> usize {
        3 * self.hid * (self.inp + self.hid) + 6 * self.hid
    }

    pub fn forward(&self, ps: &ParamStore, x: &[f64], h: &[f64]) -> (Vec<f64>, GruCache) {
        let hd = self.hid;
        let mut gi = ps.get(self.b_ih).to_vec();
        matvec_acc(ps.get(self.w_ih), 3 * hd, self.inp, x, &mut gi);
        let mut gh = ps.get(self.b_hh).to_vec();
        matvec_acc(ps.get(self.w_hh), 3 * hd, hd, h, &mut gh);
        let mut r = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        let mut n = vec![0.0; hd];
        let mut out = vec![0.0; hd];
        for j in 0..hd {
            r[j] = sigmoid(gi[j] + gh[j]);
            z[j] = sigmoid(gi[hd + j] + gh[hd + j]);
            n[j] = (gi[2 * hd + j] + r[j] * gh[2 * hd + j]).tanh();
            out[j] = (1.0 - z[j]) * n[j] + z[j] * h[j];
        }
        let ghn = gh[2 * hd..].to_vec();
        (out, GruCache { x: x.to_vec(), h: h.to_vec(), r, z, n, ghn })
    }

    /// Returns the gradient with respect to the previous hidden state.
    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &GruCache,
        dh_out: &[f64],
        grads: &mut Grads,
        dx: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let hd = self.hid;
        let mut d_gi = vec![0.0; 3 * hd];
        let mut d_gh = vec![0.0; 3 * hd];
        let mut dh = vec![0.0; hd];
        for j in 0..hd {
            let (r, z, n) = (cache.r[j], cache.z[j], cache.n[j]);
            let g = dh_out[j];
            let dn = g * (1.0 - z);
            let dz = g * (cache.h[j] - n);
            dh[j] = g * z;
            let dan = dn * (1.0 - n * n);
            let dr = dan * cache.ghn[j];
            let dar = dr * r * (1.0 - r);
            let daz = dz * z * (1.0 - z);
            d_gi[j] = dar;
            d_gi[hd + j] = daz;
            d_gi[2 * hd + j] = dan;
            d_gh[j] = dar;
            d_gh[hd + j] = daz;
            d_gh[2 * hd + j] = dan * r;
        }
        outer_acc(grads.get_mut(self.w_ih), self.inp, &d_gi, &cache.x);
        outer_acc(grads.get_mut(self.w_hh), hd, &d_gh, &cache.h);
        grads.get_mut(self.b_ih).iter_mut().zip(&d_gi).for_each(|(a, b)| *a += b);
        grads.get_mut(self.b_hh).iter_mut().zip(&d_gh).for_each(|(a, b)| *a += b);
        matvec_t_acc(ps.get(self.w_hh), 3 * hd, hd, &d_gh, &mut dh);
        if let Some(dx) = dx {
            matvec_t_acc(ps.get(self.w_ih), 3 * hd, self.inp, &d_gi, dx);
        }
        dh
    }
}

/// Stacked GRU; hidden state is `layers x hid`, layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStack {
    pub layers: Vec<Gru>,
}

impl GruStack {
    pub fn new(ps: &mut ParamStore, name: &str, inp: usize, hid: usize, layers: usize, rng: &mut Rng) -> Self {
        let layers = (0..layers)
            .map(|l| Gru::new(ps, &format!("{name}.l{l}"), if l == 0 { inp } else { hid }, hid, rng))
            .collect();
        GruStack { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hid
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Gru::param_count).sum()
    }

    /// Returns the new stacked hidden state; its last layer is the output.
    pub fn forward(&self, ps: &ParamStore, x: &[f64], h: &[f64]) -> (Vec<f64>, Vec<GruCache>) {
        let hd = self.hidden();
        let mut out = Vec::with_capacity(h.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let (hn, c) = layer.forward(ps, &input, &h[l * hd..(l + 1) * hd]);
            out.extend_from_slice(&hn);
            caches.push(c);
            input = hn;
        }
        (out, caches)
    }

    /// `d_top` is the gradient on the top-layer output from the heads;
    /// `dh_next` the gradient on the whole new hidden state from later steps.
    /// Returns (d input, d previous hidden).
    pub fn backward(
        &self,
        ps: &ParamStore,
        caches: &[GruCache],
        d_top: &[f64],
        dh_next: &[f64],
        grads: &mut Grads,
        need_dx: bool,
    ) -> (Option<Vec<f64>>, Vec<f64>) {
        let hd = self.hidden();
        let nl = self.layers.len();
        let mut dh_prev = vec![0.0; nl * hd];
        let mut d_out: Vec<f64> = d_top.iter().zip(&dh_next[(nl - 1) * hd..]).map(|(a, b)| a + b).collect();
        let mut dx_final = None;
        for l in (0..nl).rev() {
            let layer = &self.layers[l];
            let mut dx = vec![0.0; layer.inp];
            let want_dx = l > 0 || need_dx;
            let dh = layer.backward(ps, &caches[l], &d_out, grads, want_dx.then_some(&mut dx[..]));
            dh_prev[l * hd..(l + 1) * hd].copy_from_slice(&dh);
            if l > 0 {
                d_out = dx.iter().zip(&dh_next[(l - 1) * hd..l * hd]).map(|(a, b)| a + b).collect();
            } else if need_dx {
                dx_final = Some(dx);
            }
        }
        (dx_final, dh_prev)
    }
}
