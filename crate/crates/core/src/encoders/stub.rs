//! Weightless stand-ins for pretrained backbones.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use super::pool::pool_grid;
use super::text::text_embed;
use super::{BackboneSource, BackboneSpec};
use crate::error::{Error, Result};
use crate::nn::io::read_params;
use crate::nn::{gaussian, ParamStore};
use crate::rng::{rng_from_bytes, Rng, SeedStream};
use crate::sim::labels::FREE_SPACE_CLASSES;
use crate::sim::render::{Frame, RgbImage, Surface};
use crate::sim::scene::category_name;
use crate::sim::{ARM_REACH_HEIGHT, INTERACTION_RANGE};

#[derive(Debug, Clone, PartialEq)]
struct Conv3x3 {
    inp: usize,
    out: usize,
    stride: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Conv3x3 {
    /// Zero-padded 3x3 convolution followed by ReLU.
    fn forward(&self, x: &[f64], size: usize) -> (Vec<f64>, usize) {
        let out_size = size.div_ceil(self.stride);
        let mut y = vec![0.0; self.out * out_size * out_size];
        for o in 0..self.out {
            let plane = &mut y[o * out_size * out_size..(o + 1) * out_size * out_size];
            plane.iter_mut().for_each(|v| *v = self.b[o]);
            for c in 0..self.inp {
                let xin = &x[c * size * size..(c + 1) * size * size];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = self.w[((o * self.inp + c) * 3 + ky) * 3 + kx];
                        for oy in 0..out_size {
                            let iy = (oy * self.stride + ky) as isize - 1;
                            if iy < 0 || iy >= size as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * size..(iy as usize + 1) * size];
                            let orow = &mut plane[oy * out_size..(oy + 1) * out_size];
                            for (ox, ov) in orow.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - 1;
                                if ix >= 0 && ix < size as isize {
                                    *ov += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            plane.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        (y, out_size)
    }
}

/// Four 3x3 convolutions (strides 2, 2, 2, 1) and an area-weighted pool to the
/// target spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    layers: Vec<Conv3x3>,
    spatial: usize,
}

const WIDTHS: [usize; 3] = [16, 32, 64];
const STRIDES: [usize; 4] = [2, 2, 2, 1];

fn final_size(image: usize) -> usize {
    STRIDES.iter().fold(image, |s, st| s.div_ceil(*st))
}

impl ConvStack {
    pub fn random(spec: &BackboneSpec, rng: &mut Rng) -> Self {
        let mut inp = 3;
        let mut layers = Vec::new();
        for (i, &stride) in STRIDES.iter().enumerate() {
            let out = if i < 3 { WIDTHS[i] } else { spec.channels };
            let std = (2.0 / (inp * 9) as f64).sqrt();
            layers.push(Conv3x3 { inp, out, stride, w: gaussian(rng, out * inp * 9, std), b: vec![0.0; out] });
            inp = out;
        }
        ConvStack { layers, spatial: spec.spatial }
    }

    pub fn load(spec: &BackboneSpec, path: &Path) -> Result<Self> {
        let (ps, _) = read_params(path)?;
        let mut inp = 3;
        let mut layers = Vec::new();
        for (i, &stride) in STRIDES.iter().enumerate() {
            let out = if i < 3 { WIDTHS[i] } else { spec.channels };
            let w =
                ps.find(&format!("conv{i}.weight")).ok_or_else(|| Error::Format(format!("missing conv{i}.weight")))?;
            let b = ps.find(&format!("conv{i}.bias")).ok_or_else(|| Error::Format(format!("missing conv{i}.bias")))?;
            if ps.shape(w) != [out, inp, 3, 3] || ps.shape(b) != [out] {
                return Err(Error::Shape {
                    expected: format!("[{out}, {inp}, 3, 3]"),
                    got: format!("{:?}", ps.shape(w)),
                });
            }
            layers.push(Conv3x3 { inp, out, stride, w: ps.get(w).to_vec(), b: ps.get(b).to_vec() });
            inp = out;
        }
        if final_size(spec.image_size) < spec.spatial {
            return Err(Error::Config(format!(
                "image size {} too small for spatial {}",
                spec.image_size, spec.spatial
            )));
        }
        Ok(ConvStack { layers, spatial: spec.spatial })
    }

    pub fn export(&self, ps: &mut ParamStore) {
        for (i, l) in self.layers.iter().enumerate() {
            ps.add(format!("conv{i}.weight"), &[l.out, l.inp, 3, 3], l.w.clone());
            ps.add(format!("conv{i}.bias"), &[l.out], l.b.clone());
        }
    }

    pub fn forward(&self, image: &RgbImage) -> Vec<f32> {
        let mut x: Vec<f64> = image.data.iter().map(|&v| v as f64).collect();
        let mut size = image.size;
        for l in &self.layers {
            let (y, s) = l.forward(&x, size);
            x = y;
            size = s;
        }
        let channels = self.layers.last().map_or(3, |l| l.out);
        let spatial = self.spatial.min(size);
        pool_grid(&x, channels, size, spatial).into_iter().map(|v| v as f32).collect()
    }
}

/// Number of state variables per spatial bin for `k` categories.
pub fn informative_state_dim(k: usize) -> usize {
    3 * k + 4 + FREE_SPACE_CLASSES + 2
}

/// Features are `W s` per spatial bin, where `s` stacks indicators of visible
/// categories, near categories, reachable categories and open objects, the
/// floor/wall/ceiling fractions, the one-hot free-space class of the view, and
/// the bin's column and row in [-1, 1] (conv features carry absolute position).
/// Category columns are the categories' text embeddings; near columns lean
/// toward them.
#[derive(Debug, Clone, PartialEq)]
pub struct Informative {
    categories: usize,
    channels: usize,
    spatial: usize,
    /// Row-major C x S.
    w: Vec<f64>,
}

impl Informative {
    pub fn new(spec: &BackboneSpec, seeds: &SeedStream) -> Self {
        let k = match spec.source {
            BackboneSource::StubInformative { categories, .. } => categories,
            _ => unreachable!("informative stub built from another source"),
        };
        let c = spec.channels;
        let s = informative_state_dim(k);
        let mut rng = seeds.child("informative").rng();
        let unit = |rng: &mut Rng| {
            let v: Vec<f64> = (0..c).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(s);
        for cat in 0..k {
            cols.push(text_embed(&category_name(cat), c));
        }
        for cat in 0..k {
            let t = text_embed(&category_name(cat), c);
            let r = unit(&mut rng);
            let v: Vec<f64> = t.iter().zip(&r).map(|(a, b)| a + b).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
        for _ in 2 * k..s {
            cols.push(unit(&mut rng));
        }
        let mut w = vec![0.0; c * s];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..c {
                w[i * s + j] = col[i];
            }
        }
        Informative { categories: k, channels: c, spatial: spec.spatial, w }
    }

    pub fn export(&self, ps: &mut ParamStore) {
        let s = informative_state_dim(self.categories);
        ps.add("informative.weight", &[self.channels, s], self.w.clone());
    }

    /// Per-bin state vectors, `S x bins` channel-major.
    pub fn state(&self, frame: &Frame) -> Vec<f64> {
        let k = self.categories;
        let s = informative_state_dim(k);
        let size = frame.view.size;
        let sp = self.spatial;
        let bins = sp * sp;
        let mut st = vec![0.0; s * bins];
        let mut counts = vec![0usize; bins];
        let meta = &frame.meta;
        for (i, surf) in frame.view.surfaces.iter().enumerate() {
            let b = (i / size * sp / size) * sp + (i % size) * sp / size;
            counts[b] += 1;
            match *surf {
                Surface::Floor => st[(3 * k + 1) * bins + b] += 1.0,
                Surface::Wall => st[(3 * k + 2) * bins + b] += 1.0,
                Surface::Ceiling => st[(3 * k + 3) * bins + b] += 1.0,
                Surface::Object(id) => {
                    let Some(o) = meta.objects.iter().find(|o| o.id == id) else {
                        continue;
                    };
                    if o.category >= k {
                        continue;
                    }
                    st[o.category * bins + b] = 1.0;
                    if o.distance <= INTERACTION_RANGE {
                        st[(k + o.category) * bins + b] = 1.0;
                        if o.height <= ARM_REACH_HEIGHT {
                            st[(2 * k + o.category) * bins + b] = 1.0;
                        }
                    }
                    if o.open {
                        st[3 * k * bins + b] = 1.0;
                    }
                }
            }
        }
        for b in 0..bins {
            let n = counts[b].max(1) as f64;
            for row in 3 * k + 1..3 * k + 4 {
                st[row * bins + b] /= n;
            }
            st[(3 * k + 4 + meta.free_steps.min(FREE_SPACE_CLASSES - 1)) * bins + b] = 1.0;
            if sp > 1 {
                let coord = |i: usize| 2.0 * i as f64 / (sp - 1) as f64 - 1.0;
                st[(s - 2) * bins + b] = coord(b % sp);
                st[(s - 1) * bins + b] = coord(b / sp);
            }
        }
        st
    }

    pub fn encode(&self, frame: &Frame) -> Vec<f32> {
        let s = informative_state_dim(self.categories);
        let bins = self.spatial * self.spatial;
        let st = self.state(frame);
        let mut out = vec![0.0f32; self.channels * bins];
        for c in 0..self.channels {
            let wrow = &self.w[c * s..(c + 1) * s];
            let orow = &mut out[c * bins..(c + 1) * bins];
            for (j, &wv) in wrow.iter().enumerate() {
                let srow = &st[j * bins..(j + 1) * bins];
                if srow.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (o, sv) in orow.iter_mut().zip(srow) {
                    *o += (wv * sv) as f32;
                }
            }
        }
        out
    }
}

/// Gaussian features keyed by a hash of the image bytes.
pub fn noise_features(spec: &BackboneSpec, image: &RgbImage) -> Vec<f32> {
    let mut rng = rng_from_bytes(spec.seed(), &image.to_le_bytes());
    (0..spec.channels * spec.spatial * spec.spatial)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z as f32
        })
        .collect()
}
