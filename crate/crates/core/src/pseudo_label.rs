//! Patch pseudo-labels from nearest-neighbor distances to a memory bank that
//! is rebuilt from the currently most-normal images at every iteration.

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FunadError, Result};
use crate::feature_store::FeatureTensor;
use crate::localnet::{forward_batch, AdaptorBoundary, LocalNetParams};
use crate::neighbors::{mutual_pairs, nearest_neighbors, sq_dist};
use crate::rng::{self, streams, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Images with normalized score below this feed the memory bank.
    pub tau_b: f64,
    /// Patch scores at or above this are labeled anomalous.
    pub tau_n: f64,
    /// Anomalous patches below this are ambiguous and get perturbed.
    pub tau_c: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_b: 0.5,
            tau_n: 0.5,
            tau_c: 0.9,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_b > 0.0 && self.tau_b <= 1.0) {
            return Err(FunadError::arg(format!("tau_b {} outside (0, 1]", self.tau_b)));
        }
        if !(self.tau_n > 0.0 && self.tau_n < 1.0) {
            return Err(FunadError::arg(format!("tau_n {} outside (0, 1)", self.tau_n)));
        }
        if !(self.tau_c > self.tau_n && self.tau_c <= 1.0) {
            return Err(FunadError::arg(format!(
                "tau_c {} must lie in (tau_n, 1]",
                self.tau_c
            )));
        }
        Ok(())
    }
}

/// Min-max normalization to [0, 1]; an all-equal input maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / span).collect()
}

/// Features of every patch as one f64 row-major block.
pub fn features_f64(tensor: &FeatureTensor) -> Vec<f64> {
    tensor.data().iter().map(|&v| v as f64).collect()
}

/// Max over each image's `n_patches` consecutive scores.
pub fn max_pool(patch_scores: &[f64], n_patches: usize) -> Vec<f64> {
    patch_scores
        .chunks(n_patches)
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Max-pooled patch scores per image, min-max normalized across images.
pub fn image_scores(params: &LocalNetParams, features: &FeatureTensor) -> Result<Vec<f64>> {
    if features.n_images() == 0 {
        return Err(FunadError::arg("no images to score"));
    }
    let pass = forward_batch(params, &features_f64(features))?;
    Ok(min_max_normalize(&max_pool(&pass.scores, features.n_patches())))
}

/// Adapted patch features of the images in the selected subset.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub dim: usize,
    /// `len() x dim`, row-major.
    pub vectors: Vec<f64>,
    /// (image, patch) of each row.
    pub provenance: Vec<(usize, usize)>,
    /// The sampled image subset, ascending.
    pub source_images: Vec<usize>,
}

impl MemoryBank {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    /// Gathers the rows of `adapted` (all images, `n_patches` rows each)
    /// belonging to `images`.
    pub fn from_adapted(adapted: &[f64], dim: usize, n_patches: usize, images: Vec<usize>) -> Self {
        let mut vectors = Vec::with_capacity(images.len() * n_patches * dim);
        let mut provenance = Vec::with_capacity(images.len() * n_patches);
        for &i in &images {
            let start = i * n_patches * dim;
            vectors.extend_from_slice(&adapted[start..start + n_patches * dim]);
            provenance.extend((0..n_patches).map(|j| (i, j)));
        }
        Self {
            dim,
            vectors,
            provenance,
            source_images: images,
        }
    }
}

/// Images with normalized score strictly below `tau_b`.
pub fn candidate_images(normalized_scores: &[f64], tau_b: f64) -> Vec<usize> {
    normalized_scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s < tau_b)
        .map(|(i, _)| i)
        .collect()
}

/// Random `ceil(sample_ratio * |candidates|)` subset, returned ascending.
pub fn sample_images(candidates: &[usize], sample_ratio: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(sample_ratio > 0.0 && sample_ratio <= 1.0) {
        return Err(FunadError::arg(format!(
            "sample ratio {sample_ratio} outside (0, 1]"
        )));
    }
    let take = ((sample_ratio * candidates.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let take = take.min(candidates.len());
    let mut picked: Vec<usize> = index::sample(rng, candidates.len(), take)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Selects the bank images from normalized image scores.
pub fn select_bank_images(
    normalized_scores: &[f64],
    tau_b: f64,
    sample_ratio: f64,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let candidates = candidate_images(normalized_scores, tau_b);
    if candidates.is_empty() {
        return Err(FunadError::EmptyBank(format!(
            "no image scored below tau_b={tau_b}"
        )));
    }
    sample_images(&candidates, sample_ratio, rng)
}

pub fn build_memory_bank(
    params: &LocalNetParams,
    features: &FeatureTensor,
    thresholds: &Thresholds,
    sample_ratio: f64,
    seed: u64,
) -> Result<MemoryBank> {
    build_memory_bank_at(
        params,
        features,
        thresholds,
        sample_ratio,
        AdaptorBoundary::FirstLayer,
        &mut rng::stream(seed, streams::BANK),
    )
}

pub fn build_memory_bank_at(
    params: &LocalNetParams,
    features: &FeatureTensor,
    thresholds: &Thresholds,
    sample_ratio: f64,
    boundary: AdaptorBoundary,
    rng: &mut Rng,
) -> Result<MemoryBank> {
    thresholds.validate()?;
    if features.n_images() == 0 {
        return Err(FunadError::arg("no images to build a bank from"));
    }
    let pass = forward_batch(params, &features_f64(features))?;
    let scores = min_max_normalize(&max_pool(&pass.scores, features.n_patches()));
    let images = select_bank_images(&scores, thresholds.tau_b, sample_ratio, rng)?;
    let dim = params.shape().adaptor_dim(boundary);
    Ok(MemoryBank::from_adapted(
        pass.adapted(boundary),
        dim,
        features.n_patches(),
        images,
    ))
}

/// Per-patch pseudo-label state for one mini-batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabelBatch {
    /// Distance to the nearest bank vector at nonzero distance.
    pub d: Vec<f64>,
    /// `d` min-max normalized over the batch.
    pub s: Vec<f64>,
    /// 1 = anomaly.
    pub y: Vec<u8>,
    pub ambiguous: Vec<bool>,
}

impl PseudoLabelBatch {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn n_anomaly(&self) -> usize {
        self.y.iter().filter(|&&y| y == 1).count()
    }

    pub fn n_ambiguous(&self) -> usize {
        self.ambiguous.iter().filter(|&&a| a).count()
    }
}

/// Nearest-neighbor distances of `queries` (rows of `bank.dim`) to the bank,
/// skipping bank vectors at distance exactly zero, then normalized.
pub fn nn_scores(bank: &MemoryBank, queries: &[f64]) -> Result<PseudoLabelBatch> {
    if bank.is_empty() {
        return Err(FunadError::EmptyBank("bank has no vectors".into()));
    }
    if !queries.len().is_multiple_of(bank.dim) {
        return Err(FunadError::arg("query length is not a multiple of bank dim"));
    }
    let dim = bank.dim;
    let d: Vec<f64> = queries
        .par_chunks(dim)
        .enumerate()
        .map(|(q, query)| {
            let mut best = f64::INFINITY;
            for m in bank.vectors.chunks(dim) {
                let d2 = sq_dist(query, m);
                if d2 > 0.0 && d2 < best {
                    best = d2;
                }
            }
            if best.is_finite() {
                Ok(best.sqrt())
            } else {
                Err(FunadError::EmptyBank(format!(
                    "query {q} has no bank vector at nonzero distance"
                )))
            }
        })
        .collect::<Result<_>>()?;
    let s = min_max_normalize(&d);
    Ok(PseudoLabelBatch {
        d,
        s,
        ..Default::default()
    })
}

/// `y = H(s - tau_n)` with `H(0) = 1`; ambiguous when `tau_n < s < tau_c`.
pub fn assign_labels(batch: &mut PseudoLabelBatch, thresholds: &Thresholds) {
    batch.y = batch
        .s
        .iter()
        .map(|&s| u8::from(s >= thresholds.tau_n))
        .collect();
    batch.ambiguous = batch
        .s
        .iter()
        .map(|&s| thresholds.tau_n < s && s < thresholds.tau_c)
        .collect();
}

/// Which patch pairs may be matched.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRule {
    /// Any two distinct patches.
    #[default]
    DistinctPatch,
    /// Patches that differ in both image and patch index.
    DistinctImageAndPatch,
}

/// Disjoint mutually-closest pairs, indices into the batch rows, `a < b`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MutualPairSet {
    pub pairs: Vec<(usize, usize)>,
}

impl MutualPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn find_mutual_pairs(adapted: &[f64], dim: usize) -> MutualPairSet {
    if adapted.len() < 2 * dim {
        return MutualPairSet::default();
    }
    MutualPairSet {
        pairs: mutual_pairs(&nearest_neighbors(adapted, dim, |_, _| true)),
    }
}

/// As [`find_mutual_pairs`], with `provenance[k] = (image, patch)` of row k.
pub fn find_mutual_pairs_with(
    adapted: &[f64],
    dim: usize,
    provenance: &[(usize, usize)],
    rule: PairRule,
) -> MutualPairSet {
    if adapted.len() < 2 * dim {
        return MutualPairSet::default();
    }
    let nn = match rule {
        PairRule::DistinctPatch => nearest_neighbors(adapted, dim, |_, _| true),
        PairRule::DistinctImageAndPatch => nearest_neighbors(adapted, dim, |a, b| {
            provenance[a].0 != provenance[b].0 && provenance[a].1 != provenance[b].1
        }),
    };
    MutualPairSet {
        pairs: mutual_pairs(&nn),
    }
}

/// Unbiased per-dimension variance of the rows.
pub fn batch_variance(features: &[f64], dim: usize) -> Vec<f64> {
    let n = features.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in features.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for row in features.chunks(dim) {
        for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    var
}

/// Adds `N(0, diag(batch variance))` noise to every ambiguous row.
pub fn augment_ambiguous(
    features: &[f64],
    dim: usize,
    batch: &PseudoLabelBatch,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if features.len() != batch.ambiguous.len() * dim {
        return Err(FunadError::arg("features and labels disagree on batch size"));
    }
    let mut out = features.to_vec();
    let n = batch.ambiguous.len();
    if batch.n_ambiguous() == 0 {
        return Ok(out);
    }
    if n < 2 {
        log::warn!("mini-batch of one patch: variance undefined, skipping augmentation");
        return Ok(out);
    }
    let std: Vec<f64> = batch_variance(features, dim).iter().map(|v| v.sqrt()).collect();
    for (row, _) in out
        .chunks_mut(dim)
        .zip(&batch.ambiguous)
        .filter(|(_, &amb)| amb)
    {
        for (v, s) in row.iter_mut().zip(&std) {
            let z: f64 = StandardNormal.sample(rng);
            *v += s * z;
        }
    }
    Ok(out)
}

pub fn augment_ambiguous_seeded(
    features: &[f64],
    dim: usize,
    batch: &PseudoLabelBatch,
    seed: u64,
) -> Result<Vec<f64>> {
    augment_ambiguous(features, dim, batch, &mut rng::stream(seed, streams::AUGMENT))
}
