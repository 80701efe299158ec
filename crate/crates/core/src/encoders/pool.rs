use super::FeatureMap;
use crate::error::{Error, Result};
use crate::nn::layers::matvec_acc;
use crate::nn::{gaussian, softmax, ParamId, ParamStore};
use crate::rng::Rng;

/// Overlap of input cell `[j, j+1)` with output bin `i` of `m` bins over `n` inputs,
/// in units of input cells.
fn overlap(n: usize, m: usize, i: usize, j: usize) -> f64 {
    let lo = (i * n) as f64 / m as f64;
    let hi = ((i + 1) * n) as f64 / m as f64;
    let a = (j as f64).max(lo);
    let b = ((j + 1) as f64).min(hi);
    (b - a).max(0.0)
}

/// Area-weighted bin weights, `weights[i * n + j]`, each row summing to 1.
pub fn bin_weights(n: usize, m: usize) -> Vec<f64> {
    let width = n as f64 / m as f64;
    let mut w = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            w[i * n + j] = overlap(n, m, i, j) / width;
        }
    }
    w
}

/// Pool a C x n x n map (channel-major, f64) to C x m x m with area-weighted bins.
pub fn pool_grid(data: &[f64], channels: usize, n: usize, m: usize) -> Vec<f64> {
    let w = bin_weights(n, m);
    let mut out = vec![0.0; channels * m * m];
    for c in 0..channels {
        let plane = &data[c * n * n..(c + 1) * n * n];
        for oy in 0..m {
            for ox in 0..m {
                let mut acc = 0.0;
                for y in 0..n {
                    let wy = w[oy * n + y];
                    if wy == 0.0 {
                        continue;
                    }
                    for x in 0..n {
                        let wx = w[ox * n + x];
                        if wx != 0.0 {
                            acc += wy * wx * plane[y * n + x];
                        }
                    }
                }
                out[c * m * m + oy * m + ox] = acc;
            }
        }
    }
    out
}

/// Average-pool to `out_spatial`; 1 gives a C-vector, 3 a C x 3 x 3 grid (flattened channel-major).
pub fn average_pool(f: &FeatureMap, out_spatial: usize) -> Result<Vec<f64>> {
    if out_spatial == 0 || out_spatial > f.spatial {
        return Err(Error::OutOfRange { index: out_spatial, limit: f.spatial });
    }
    Ok(pool_grid(&f.to_f64(), f.channels, f.spatial, out_spatial))
}

/// Frozen multi-head attention pooling: the mean token (plus positional
/// embedding) queries all tokens, followed by an output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPool {
    pub embed: usize,
    pub tokens: usize,
    pub out_dim: usize,
    pub heads: usize,
    ps: ParamStore,
    pos: ParamId,
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    c: (ParamId, ParamId),
}

impl AttentionPool {
    /// With `identity`, value and output projections are identities (output
    /// projection is random when `out_dim != embed`) and query/key weights are
    /// small, so the pool stays close to an average of the tokens.
    pub fn new(embed: usize, tokens: usize, out_dim: usize, heads: usize, identity: bool, rng: &mut Rng) -> Self {
        let std = (embed as f64).powf(-0.5);
        let qk_std = if identity { 0.1 * std } else { std };
        let mut ps = ParamStore::new();
        let pos = ps.add(
            "attnpool.positional_embedding",
            &[tokens + 1, embed],
            gaussian(rng, (tokens + 1) * embed, if identity { 0.01 } else { std }),
        );
        let proj = |ps: &mut ParamStore, name: &str, rows: usize, ident: bool, s: f64, rng: &mut Rng| {
            let w = if ident {
                let mut w = vec![0.0; rows * embed];
                for i in 0..rows.min(embed) {
                    w[i * embed + i] = 1.0;
                }
                w
            } else {
                gaussian(rng, rows * embed, s)
            };
            let wid = ps.add(format!("attnpool.{name}.weight"), &[rows, embed], w);
            let bid = ps.add(format!("attnpool.{name}.bias"), &[rows], vec![0.0; rows]);
            (wid, bid)
        };
        let q = proj(&mut ps, "q_proj", embed, false, qk_std, rng);
        let k = proj(&mut ps, "k_proj", embed, false, qk_std, rng);
        let v = proj(&mut ps, "v_proj", embed, identity, std, rng);
        let c = proj(&mut ps, "c_proj", out_dim, identity && out_dim == embed, std, rng);
        AttentionPool { embed, tokens, out_dim, heads, ps, pos, q, k, v, c }
    }

    /// Build from explicit weights (row-major), mainly for hand-checked toy cases.
    #[allow(clippy::too_many_arguments)]
    pub fn from_weights(
        embed: usize,
        tokens: usize,
        heads: usize,
        pos: Vec<f64>,
        q: Vec<f64>,
        k: Vec<f64>,
        v: Vec<f64>,
        c: Vec<f64>,
        out_dim: usize,
    ) -> Self {
        let mut ps = ParamStore::new();
        let pos = ps.add("attnpool.positional_embedding", &[tokens + 1, embed], pos);
        let mut add = |name: &str, rows: usize, w: Vec<f64>| {
            let wid = ps.add(format!("attnpool.{name}.weight"), &[rows, embed], w);
            let bid = ps.add(format!("attnpool.{name}.bias"), &[rows], vec![0.0; rows]);
            (wid, bid)
        };
        let q = add("q_proj", embed, q);
        let k = add("k_proj", embed, k);
        let v = add("v_proj", embed, v);
        let c = add("c_proj", out_dim, c);
        AttentionPool { embed, tokens, out_dim, heads, ps, pos, q, k, v, c }
    }

    pub fn export(&self, out: &mut ParamStore) {
        for id in self.ps.ids() {
            out.add(self.ps.name(id), self.ps.shape(id), self.ps.get(id).to_vec());
        }
    }

    fn project(&self, (w, b): (ParamId, ParamId), rows: usize, x: &[f64]) -> Vec<f64> {
        let mut y = self.ps.get(b).to_vec();
        matvec_acc(self.ps.get(w), rows, self.embed, x, &mut y);
        y
    }

    pub fn forward(&self, f: &FeatureMap) -> Result<Vec<f64>> {
        if f.channels != self.embed || f.positions() != self.tokens {
            return Err(Error::Shape {
                expected: format!("{} channels x {} positions", self.embed, self.tokens),
                got: format!("{} channels x {} positions", f.channels, f.positions()),
            });
        }
        self.forward_tokens(&f.to_f64())
    }

    /// `x` is channel-major, `embed x tokens`.
    pub fn forward_tokens(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (c, p) = (self.embed, self.tokens);
        if x.len() != c * p {
            return Err(Error::Shape { expected: format!("{}", c * p), got: format!("{}", x.len()) });
        }
        let pos = self.ps.get(self.pos);
        // Token-major sequence: mean token first.
        let mut seq = vec![0.0; (p + 1) * c];
        for ch in 0..c {
            let row = &x[ch * p..(ch + 1) * p];
            seq[ch] = row.iter().sum::<f64>() / p as f64;
            for (t, v) in row.iter().enumerate() {
                seq[(t + 1) * c + ch] = *v;
            }
        }
        seq.iter_mut().zip(pos).for_each(|(s, e)| *s += e);
        let hd = c / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let q: Vec<f64> = self.project(self.q, c, &seq[..c]).into_iter().map(|v| v * scale).collect();
        let keys: Vec<Vec<f64>> = (0..=p).map(|t| self.project(self.k, c, &seq[t * c..(t + 1) * c])).collect();
        let vals: Vec<Vec<f64>> = (0..=p).map(|t| self.project(self.v, c, &seq[t * c..(t + 1) * c])).collect();
        let mut attended = vec![0.0; c];
        for h in 0..self.heads {
            let r = h * hd..(h + 1) * hd;
            let scores: Vec<f64> =
                keys.iter().map(|k| q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum()).collect();
            let a = softmax(&scores);
            for (t, w) in a.iter().enumerate() {
                for j in r.clone() {
                    attended[j] += w * vals[t][j];
                }
            }
        }
        let mut out = self.ps.get(self.c.1).to_vec();
        matvec_acc(self.ps.get(self.c.0), self.out_dim, c, &attended, &mut out);
        Ok(out)
    }
}
