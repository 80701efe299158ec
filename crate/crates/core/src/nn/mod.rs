//! Minimal f64 neural-network toolkit with hand-written backward passes.

pub mod io;
pub mod layers;
pub mod optim;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use layers::{Conv1x1, Embedding, Gru, GruCache, GruStack, Linear};
pub use optim::{clip_grad_norm, Adam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors, stored flat and row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    data: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "parameter {name} has wrong length");
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        self.data.push(data);
        ParamId(self.data.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.data.len()).map(ParamId)
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    pub fn zeros_like(&self) -> Grads {
        Grads(self.data.iter().map(|d| vec![0.0; d.len()]).collect())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for ((name, shape), data) in self.names.iter().zip(&self.shapes).zip(&self.data) {
            h.update(name.as_bytes());
            for d in shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in data {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replace all values from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names || self.shapes != other.shapes {
            return Err(Error::Shape { expected: format!("{:?}", self.names), got: format!("{:?}", other.names) });
        }
        self.data.clone_from(&other.data);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

/// Gradient buffers aligned with a `ParamStore`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.0[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.0[id.0]
    }

    pub fn zero(&mut self) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn fan_in_uniform(rng: &mut Rng, rows: usize, cols: usize) -> Vec<f64> {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
}

pub fn uniform(rng: &mut Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

pub fn gaussian(rng: &mut Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

/// Square orthogonal matrix via Gram-Schmidt on a Gaussian draw, row-major.
pub fn orthogonal(rng: &mut Rng, n: usize) -> Vec<f64> {
    let mut m = gaussian(rng, n * n, 1.0);
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
            for k in 0..n {
                m[i * n + k] -= dot * m[j * n + k];
            }
        }
        let norm = (0..n).map(|k| m[i * n + k] * m[i * n + k]).sum::<f64>().sqrt();
        for k in 0..n {
            m[i * n + k] /= norm;
        }
    }
    m
}

pub fn relu(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zero the gradient wherever the forward ReLU output was zero.
pub fn relu_backward(out: &[f64], grad: &mut [f64]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}
