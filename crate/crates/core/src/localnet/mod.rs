//! The patch scoring network: `FC[d_in, h1, h2, 1]` with leaky ReLU between
//! layers and a sigmoid output.
//!
//! The feature adaptor is a prefix of the same network. Its outputs fill the
//! memory bank and drive the nearest-neighbor search, so it is trained
//! jointly with the score head. By default the prefix is the first layer
//! plus its activation ([`AdaptorBoundary::FirstLayer`]).
//!
//! Everything runs in f64. Batches are row-major `n x d_in` slices.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{RmsProp, RmsPropConfig};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FunadError, Result};
use crate::rng::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Which prefix of the network produces adapted features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptorBoundary {
    /// `leaky_relu(W1 f + b1)`, `h1` wide.
    #[default]
    FirstLayer,
    /// `leaky_relu(W2 leaky_relu(W1 f + b1) + b2)`, `h2` wide.
    SecondLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub d_in: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl NetShape {
    /// 1536 -> 1024 -> 128 -> 1, sized for concatenated ViT class and patch tokens.
    pub const PAPER: NetShape = NetShape {
        d_in: 1536,
        hidden1: 1024,
        hidden2: 128,
    };

    pub fn new(d_in: usize, hidden1: usize, hidden2: usize) -> Self {
        Self {
            d_in,
            hidden1,
            hidden2,
        }
    }

    pub fn adaptor_dim(&self, boundary: AdaptorBoundary) -> usize {
        match boundary {
            AdaptorBoundary::FirstLayer => self.hidden1,
            AdaptorBoundary::SecondLayer => self.hidden2,
        }
    }
}

/// Fully connected layer, weights stored `out x in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// Weights uniform in ±1/sqrt(fan_in), zero bias.
    pub fn init(n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let weights = (0..n_in * n_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            n_in,
            n_out,
            weights,
            bias: vec![0.0; n_out],
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.n_in..(o + 1) * self.n_in]
    }

    /// `x W^T + b` for `n` rows of `x`.
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() / self.n_in;
        let mut out = vec![0.0; n * self.n_out];
        out.par_chunks_mut(self.n_out)
            .zip(x.par_chunks(self.n_in))
            .for_each(|(y, xr)| {
                for (o, yo) in y.iter_mut().enumerate() {
                    *yo = self.bias[o] + dot(self.row(o), xr);
                }
            });
        debug_assert_eq!(out.len(), n * self.n_out);
        out
    }

    /// Accumulates weight and bias gradients for upstream `dz` (n x out)
    /// and returns the gradient with respect to `x` when asked.
    fn backward(&self, x: &[f64], dz: &[f64], grad: &mut Dense, want_dx: bool) -> Option<Vec<f64>> {
        let n_in = self.n_in;
        let n_out = self.n_out;
        grad.weights
            .par_chunks_mut(n_in)
            .zip(grad.bias.par_iter_mut())
            .enumerate()
            .for_each(|(o, (gw, gb))| {
                for (xr, dzr) in x.chunks(n_in).zip(dz.chunks(n_out)) {
                    let g = dzr[o];
                    if g == 0.0 {
                        continue;
                    }
                    *gb += g;
                    for (w, xi) in gw.iter_mut().zip(xr) {
                        *w += g * xi;
                    }
                }
            });
        if !want_dx {
            return None;
        }
        let mut dx = vec![0.0; x.len()];
        dx.par_chunks_mut(n_in)
            .zip(dz.par_chunks(n_out))
            .for_each(|(dxr, dzr)| {
                for (o, &g) in dzr.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for (d, w) in dxr.iter_mut().zip(self.row(o)) {
                        *d += g * w;
                    }
                }
            });
        Some(dx)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn leaky_relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

#[inline]
fn leaky_relu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalNetParams {
    pub layer1: Dense,
    pub layer2: Dense,
    pub layer3: Dense,
}

/// Same shape as the parameters; produced by [`backward`].
pub type Gradients = LocalNetParams;

impl LocalNetParams {
    pub fn zeros(shape: NetShape) -> Self {
        Self {
            layer1: Dense::zeros(shape.d_in, shape.hidden1),
            layer2: Dense::zeros(shape.hidden1, shape.hidden2),
            layer3: Dense::zeros(shape.hidden2, 1),
        }
    }

    pub fn init(shape: NetShape, rng: &mut Rng) -> Self {
        Self {
            layer1: Dense::init(shape.d_in, shape.hidden1, rng),
            layer2: Dense::init(shape.hidden1, shape.hidden2, rng),
            layer3: Dense::init(shape.hidden2, 1, rng),
        }
    }

    pub fn shape(&self) -> NetShape {
        NetShape::new(self.layer1.n_in, self.layer1.n_out, self.layer2.n_out)
    }

    pub fn d_in(&self) -> usize {
        self.layer1.n_in
    }

    /// Parameter buffers in declaration order: w1, b1, w2, b2, w3, b3.
    pub fn buffers(&self) -> [&[f64]; 6] {
        [
            &self.layer1.weights,
            &self.layer1.bias,
            &self.layer2.weights,
            &self.layer2.bias,
            &self.layer3.weights,
            &self.layer3.bias,
        ]
    }

    pub fn buffers_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.layer1.weights,
            &mut self.layer1.bias,
            &mut self.layer2.weights,
            &mut self.layer2.bias,
            &mut self.layer3.weights,
            &mut self.layer3.bias,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let chained = self.layer2.n_in == self.layer1.n_out
            && self.layer3.n_in == self.layer2.n_out
            && self.layer3.n_out == 1;
        let sized = [&self.layer1, &self.layer2, &self.layer3]
            .iter()
            .all(|l| l.weights.len() == l.n_in * l.n_out && l.bias.len() == l.n_out);
        if !chained || !sized {
            return Err(FunadError::Data("layer dimensions do not chain".into()));
        }
        if self.buffers().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(FunadError::Data("non-finite network parameter".into()));
        }
        Ok(())
    }

    /// `self += scale * other`, buffer by buffer.
    pub fn add_scaled(&mut self, other: &LocalNetParams, scale: f64) {
        for (dst, src) in self.buffers_mut().into_iter().zip(other.buffers()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn check_batch(&self, batch: &[f64]) -> Result<usize> {
        let d = self.d_in();
        if !batch.len().is_multiple_of(d) {
            return Err(FunadError::arg(format!(
                "batch of {} values is not a multiple of d_in={d}",
                batch.len()
            )));
        }
        Ok(batch.len() / d)
    }
}

/// Activations of one forward pass over a batch, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub n: usize,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
}

impl ForwardPass {
    pub fn adapted(&self, boundary: AdaptorBoundary) -> &[f64] {
        match boundary {
            AdaptorBoundary::FirstLayer => &self.a1,
            AdaptorBoundary::SecondLayer => &self.a2,
        }
    }
}

pub fn forward_batch(params: &LocalNetParams, batch: &[f64]) -> Result<ForwardPass> {
    let n = params.check_batch(batch)?;
    let z1 = params.layer1.forward(batch);
    let a1: Vec<f64> = z1.iter().map(|&z| leaky_relu(z)).collect();
    let z2 = params.layer2.forward(&a1);
    let a2: Vec<f64> = z2.iter().map(|&z| leaky_relu(z)).collect();
    let logits = params.layer3.forward(&a2);
    let scores = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok(ForwardPass {
        n,
        z1,
        a1,
        z2,
        a2,
        logits,
        scores,
    })
}

/// Scores only; same values as `forward_batch(..).scores`.
pub fn score_batch(params: &LocalNetParams, batch: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_batch(params, batch)?.scores)
}

pub fn forward_adaptor(params: &LocalNetParams, feature: &[f64]) -> Result<Vec<f64>> {
    forward_adaptor_at(params, feature, AdaptorBoundary::FirstLayer)
}

pub fn forward_adaptor_at(
    params: &LocalNetParams,
    feature: &[f64],
    boundary: AdaptorBoundary,
) -> Result<Vec<f64>> {
    if feature.len() != params.d_in() {
        return Err(FunadError::arg(format!(
            "feature length {} != d_in {}",
            feature.len(),
            params.d_in()
        )));
    }
    let pass = forward_batch(params, feature)?;
    Ok(pass.adapted(boundary).to_vec())
}

pub fn forward_score(params: &LocalNetParams, feature: &[f64]) -> Result<f64> {
    if feature.len() != params.d_in() {
        return Err(FunadError::arg(format!(
            "feature length {} != d_in {}",
            feature.len(),
            params.d_in()
        )));
    }
    Ok(forward_batch(params, feature)?.scores[0])
}

/// Loss gradients arriving at the network outputs for every sample.
#[derive(Debug, Clone, Copy)]
pub struct Upstream<'a> {
    /// dL/d score, one per sample.
    pub score: &'a [f64],
    /// dL/d adapted feature, `n x adaptor_dim`, at the given boundary.
    pub adapted: Option<(&'a [f64], AdaptorBoundary)>,
}

impl<'a> Upstream<'a> {
    pub fn score_only(score: &'a [f64]) -> Self {
        Self {
            score,
            adapted: None,
        }
    }
}

/// Exact parameter gradients of a loss whose derivatives with respect to
/// the scores (and optionally the adapted features) are given.
pub fn backward(params: &LocalNetParams, batch: &[f64], upstream: Upstream<'_>) -> Result<Gradients> {
    let pass = forward_batch(params, batch)?;
    let mut grads = LocalNetParams::zeros(params.shape());
    backward_into(params, batch, &pass, upstream, &mut grads)?;
    Ok(grads)
}

/// Adds the gradients for `pass` (computed from `batch`) into `grads`.
pub fn backward_into(
    params: &LocalNetParams,
    batch: &[f64],
    pass: &ForwardPass,
    upstream: Upstream<'_>,
    grads: &mut Gradients,
) -> Result<()> {
    let n = pass.n;
    if n == 0 {
        return Err(FunadError::arg("backward needs a nonempty batch"));
    }
    if upstream.score.len() != n || batch.len() != n * params.d_in() {
        return Err(FunadError::arg("upstream gradient / batch shape mismatch"));
    }
    let shape = params.shape();
    if let Some((g, boundary)) = upstream.adapted {
        if g.len() != n * shape.adaptor_dim(boundary) {
            return Err(FunadError::arg("adapted-feature gradient has the wrong shape"));
        }
    }
    if upstream.score.iter().any(|g| !g.is_finite()) {
        return Err(FunadError::arg("non-finite upstream gradient"));
    }

    let dlogit: Vec<f64> = upstream
        .score
        .iter()
        .zip(&pass.scores)
        .map(|(g, s)| g * s * (1.0 - s))
        .collect();
    let mut da2 = params
        .layer3
        .backward(&pass.a2, &dlogit, &mut grads.layer3, true)
        .expect("dx requested");
    if let Some((g, AdaptorBoundary::SecondLayer)) = upstream.adapted {
        for (d, u) in da2.iter_mut().zip(g) {
            *d += u;
        }
    }
    let dz2: Vec<f64> = da2
        .iter()
        .zip(&pass.z2)
        .map(|(d, &z)| d * leaky_relu_grad(z))
        .collect();
    let mut da1 = params
        .layer2
        .backward(&pass.a1, &dz2, &mut grads.layer2, true)
        .expect("dx requested");
    if let Some((g, AdaptorBoundary::FirstLayer)) = upstream.adapted {
        for (d, u) in da1.iter_mut().zip(g) {
            *d += u;
        }
    }
    let dz1: Vec<f64> = da1
        .iter()
        .zip(&pass.z1)
        .map(|(d, &z)| d * leaky_relu_grad(z))
        .collect();
    params.layer1.backward(batch, &dz1, &mut grads.layer1, false);
    Ok(())
}
