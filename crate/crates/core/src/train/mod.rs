//! Losses and the training loop.
//!
//! Every iteration rebuilds the memory bank from the images the current
//! network scores most normal, pseudo-labels the mini-batch patches
//! against it, finds mutually closest pairs among the batch's adapted
//! features, perturbs ambiguous patches and takes one optimizer step on
//! `L_phi + ms_weight * L_MS`.

mod loss;

pub use loss::{
    balanced_bce, balanced_bce_grad, composite_gradient, composite_loss, mutual_smoothness,
    mutual_smoothness_grad, LossValues, StepInputs, SCORE_CLAMP,
};

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FunadError, Result};
use crate::eval::auroc;
use crate::feature_store::{FeatureTensor, ImageLabel};
use crate::localnet::{
    forward_batch, save_checkpoint, AdaptorBoundary, LocalNetParams, NetShape, RmsProp,
    RmsPropConfig,
};
use crate::pseudo_label::{
    assign_labels, augment_ambiguous, candidate_images, find_mutual_pairs_with, min_max_normalize,
    nn_scores, sample_images, MemoryBank, PairRule, Thresholds,
};
use crate::rng::{self, streams, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the mutual smoothness loss.
    pub ms_weight: f64,
    pub lr: f64,
    pub momentum: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    pub batch_images: usize,
    pub epochs: usize,
    pub thresholds: Thresholds,
    pub sample_ratio: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub adaptor_boundary: AdaptorBoundary,
    pub pair_rule: PairRule,
    /// Perturb ambiguous patches before the BCE term.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = RmsPropConfig::default();
        Self {
            ms_weight: 2.5,
            lr: opt.lr,
            momentum: opt.momentum,
            rms_alpha: opt.alpha,
            rms_eps: opt.eps,
            batch_images: 32,
            epochs: 1500,
            thresholds: Thresholds::default(),
            sample_ratio: 0.5,
            seed: 0,
            checkpoint_every: 0,
            hidden1: NetShape::PAPER.hidden1,
            hidden2: NetShape::PAPER.hidden2,
            adaptor_boundary: AdaptorBoundary::default(),
            pair_rule: PairRule::default(),
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> RmsPropConfig {
        RmsPropConfig {
            lr: self.lr,
            momentum: self.momentum,
            alpha: self.rms_alpha,
            eps: self.rms_eps,
        }
    }

    pub fn shape(&self, d_in: usize) -> NetShape {
        NetShape::new(d_in, self.hidden1, self.hidden2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ms_weight >= 0.0 && self.ms_weight.is_finite()) {
            return Err(FunadError::arg("ms_weight must be finite and non-negative"));
        }
        if self.batch_images == 0 {
            return Err(FunadError::arg("batch_images must be positive"));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(FunadError::arg("hidden widths must be positive"));
        }
        if !(self.sample_ratio > 0.0 && self.sample_ratio <= 1.0) {
            return Err(FunadError::arg(format!(
                "sample_ratio {} outside (0, 1]",
                self.sample_ratio
            )));
        }
        self.thresholds.validate()?;
        self.optimizer().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_phi: f64,
    pub l_ms: f64,
    pub total: f64,
    pub n_anomaly_labeled: usize,
    pub n_normal_labeled: usize,
    pub n_ambiguous: usize,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub epoch: usize,
    pub iteration: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub bank_images: usize,
    pub bank_size: usize,
    /// Set when no image fell below tau_b and the lower half was used.
    pub bank_fallback: bool,
    /// Fraction of truly normal images in the bank, when truth is known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bank_purity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub iterations: usize,
    pub mean_total: f64,
    pub mean_l_phi: f64,
    pub mean_l_ms: f64,
    /// Mean bank purity over the epoch's iterations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bank_purity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_auroc: Option<f64>,
}

/// Labeled held-out images scored after every epoch.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub features: &'a FeatureTensor,
    pub labels: &'a [ImageLabel],
    /// Return the best-scoring epoch's weights instead of the last.
    pub select_best: bool,
}

/// Optional diagnostics and side effects; none of them change the updates.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Ground truth of the training images, used only for bank purity.
    pub truth: Option<&'a [ImageLabel]>,
    pub validation: Option<Validation<'a>>,
    pub checkpoint_path: Option<&'a Path>,
    pub on_iteration: Option<Box<dyn FnMut(&IterationLog) + 'a>>,
    pub on_epoch: Option<Box<dyn FnMut(&EpochSummary, &LocalNetParams) + 'a>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final weights, or the best validation epoch's when selection is on.
    pub params: LocalNetParams,
    pub optimizer: RmsProp,
    pub iterations: Vec<IterationLog>,
    pub epochs: Vec<EpochSummary>,
    /// Epoch whose weights were returned under validation selection.
    pub best_epoch: Option<usize>,
}

pub fn initial_params(d_in: usize, config: &TrainConfig) -> LocalNetParams {
    LocalNetParams::init(config.shape(d_in), &mut rng::stream(config.seed, streams::INIT))
}

pub fn train(features: &FeatureTensor, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(features, config, TrainHooks::default())
}

/// Rows of the listed images, image-major, as f64.
fn gather(features: &FeatureTensor, images: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(images.len() * features.image_len());
    for &i in images {
        out.extend(features.image(i).iter().map(|&v| v as f64));
    }
    out
}

/// Max patch score of every image, one forward pass per image.
pub fn raw_image_scores(params: &LocalNetParams, features: &FeatureTensor) -> Result<Vec<f64>> {
    (0..features.n_images())
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = features.image(i).iter().map(|&v| v as f64).collect();
            let s = forward_batch(params, &x)?.scores;
            Ok(s.into_iter().fold(f64::NEG_INFINITY, f64::max))
        })
        .collect()
}

struct BankChoice {
    images: Vec<usize>,
    fallback: bool,
}

fn choose_bank_images(
    normalized: &[f64],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<BankChoice> {
    let mut candidates = candidate_images(normalized, config.thresholds.tau_b);
    let fallback = candidates.is_empty();
    if fallback {
        let n = normalized.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| normalized[a].total_cmp(&normalized[b]).then(a.cmp(&b)));
        order.truncate(n.div_ceil(2));
        order.sort_unstable();
        log::warn!("no image below tau_b; using the {} lowest-scoring images", order.len());
        candidates = order;
    }
    Ok(BankChoice {
        images: sample_images(&candidates, config.sample_ratio, rng)?,
        fallback,
    })
}

fn build_bank(
    params: &LocalNetParams,
    features: &FeatureTensor,
    images: Vec<usize>,
    boundary: AdaptorBoundary,
) -> Result<MemoryBank> {
    let p = features.n_patches();
    let pass = forward_batch(params, &gather(features, &images))?;
    let dim = params.shape().adaptor_dim(boundary);
    Ok(MemoryBank {
        dim,
        vectors: pass.adapted(boundary).to_vec(),
        provenance: images
            .iter()
            .flat_map(|&i| (0..p).map(move |j| (i, j)))
            .collect(),
        source_images: images,
    })
}

fn purity(images: &[usize], truth: &[ImageLabel]) -> f64 {
    let normal = images.iter().filter(|&&i| !truth[i].is_anomaly()).count();
    normal as f64 / images.len() as f64
}

pub fn train_with(
    features: &FeatureTensor,
    config: &TrainConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n = features.n_images();
    let p = features.n_patches();
    let d = features.dim();
    if n == 0 {
        return Err(FunadError::EmptyBank("training set has no images".into()));
    }
    if let Some(truth) = hooks.truth {
        if truth.len() != n {
            return Err(FunadError::arg("truth labels do not match the training set"));
        }
    }
    if let Some(v) = &hooks.validation {
        if v.features.dim() != d || v.labels.len() != v.features.n_images() {
            return Err(FunadError::arg("validation set does not match the training features"));
        }
    }

    let mut params = initial_params(d, config);
    let mut optimizer = RmsProp::new(config.optimizer(), &params)?;
    let boundary = config.adaptor_boundary;
    let adim = params.shape().adaptor_dim(boundary);

    let mut shuffle_rng = rng::stream(config.seed, streams::SHUFFLE);
    let mut bank_rng = rng::stream(config.seed, streams::BANK);
    let mut augment_rng = rng::stream(config.seed, streams::AUGMENT);

    let mut order: Vec<usize> = (0..n).collect();
    let mut iterations = Vec::new();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, LocalNetParams)> = None;
    let mut iteration = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let first_row = iterations.len();
        for batch_images in order.chunks(config.batch_images) {
            iteration += 1;

            let scores = min_max_normalize(&raw_image_scores(&params, features)?);
            let choice = choose_bank_images(&scores, config, &mut bank_rng)?;
            let bank_purity = hooks.truth.map(|t| purity(&choice.images, t));
            let bank = build_bank(&params, features, choice.images, boundary)?;

            let batch = gather(features, batch_images);
            let pass = forward_batch(&params, &batch)?;
            let adapted = pass.adapted(boundary);
            let mut labels = nn_scores(&bank, adapted)?;
            assign_labels(&mut labels, &config.thresholds);

            let provenance: Vec<(usize, usize)> = batch_images
                .iter()
                .flat_map(|&i| (0..p).map(move |j| (i, j)))
                .collect();
            let pairs = find_mutual_pairs_with(adapted, adim, &provenance, config.pair_rule);

            let augmented = if config.augment {
                augment_ambiguous(&batch, d, &labels, &mut augment_rng)?
            } else {
                batch.clone()
            };
            let inputs = StepInputs {
                original: &batch,
                augmented: &augmented,
                labels: &labels.y,
                pairs: &pairs,
                ms_weight: config.ms_weight,
            };
            let (values, grads) = composite_gradient(&params, &inputs)?;
            optimizer.step(&mut params, &grads)?;

            let n_anomaly = labels.n_anomaly();
            let row = IterationLog {
                epoch,
                iteration,
                loss: LossBreakdown {
                    l_phi: values.l_phi,
                    l_ms: values.l_ms,
                    total: values.total,
                    n_anomaly_labeled: n_anomaly,
                    n_normal_labeled: labels.len() - n_anomaly,
                    n_ambiguous: labels.n_ambiguous(),
                    n_pairs: pairs.len(),
                },
                bank_images: bank.source_images.len(),
                bank_size: bank.len(),
                bank_fallback: choice.fallback,
                bank_purity,
            };
            if let Some(cb) = hooks.on_iteration.as_mut() {
                cb(&row);
            }
            iterations.push(row);
        }

        let rows = &iterations[first_row..];
        let mean = |f: fn(&IterationLog) -> f64| {
            rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64
        };
        let validation_auroc = match &hooks.validation {
            Some(v) => {
                let s = raw_image_scores(&params, v.features)?;
                let pos: Vec<bool> = v.labels.iter().map(|l| l.is_anomaly()).collect();
                Some(auroc(&s, &pos)?)
            }
            None => None,
        };
        if let (Some(v), Some(a)) = (&hooks.validation, validation_auroc) {
            if v.select_best && best.as_ref().is_none_or(|b| a > b.0) {
                best = Some((a, epoch, params.clone()));
            }
        }
        let summary = EpochSummary {
            epoch,
            iterations: rows.len(),
            mean_total: mean(|r| r.loss.total),
            mean_l_phi: mean(|r| r.loss.l_phi),
            mean_l_ms: mean(|r| r.loss.l_ms),
            bank_purity: hooks.truth.map(|_| mean(|r| r.bank_purity.unwrap_or(0.0))),
            validation_auroc,
        };
        if let Some(path) = hooks.checkpoint_path {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                save_checkpoint(path, &params, Some(&optimizer))?;
            }
        }
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&summary, &params);
        }
        epochs.push(summary);
    }

    let (params, best_epoch) = match best {
        Some((_, e, best_params)) => (best_params, Some(e)),
        None => (params, None),
    };
    Ok(TrainOutcome {
        params,
        optimizer,
        iterations,
        epochs,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::{generate_synthetic, SyntheticGaussianConfig};

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            hidden1: 8,
            hidden2: 4,
            batch_images: 16,
            lr: 1e-3,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn small_data() -> FeatureTensor {
        let mut c = SyntheticGaussianConfig::motivation(9);
        c.n_normal = 60;
        c.n_anomaly = 6;
        generate_synthetic(&c).unwrap().0
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let f = small_data();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        let out = train(&f, &cfg).unwrap();
        assert_eq!(out.params, initial_params(f.dim(), &cfg));
        assert!(out.iterations.is_empty());
    }

    #[test]
    fn repeat_runs_are_identical() {
        let f = small_data();
        let a = train(&f, &small_config()).unwrap();
        let b = train(&f, &small_config()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.iterations.len(), 2 * 66usize.div_ceil(16));
    }

    #[test]
    fn total_is_weighted_sum_in_every_row() {
        let out = train(&small_data(), &small_config()).unwrap();
        for r in &out.iterations {
            assert!((r.loss.total - (r.loss.l_phi + 2.5 * r.loss.l_ms)).abs() < 1e-12);
        }
        let labeled: usize = out
            .iterations
            .iter()
            .filter(|r| r.epoch == 0)
            .map(|r| r.loss.n_anomaly_labeled + r.loss.n_normal_labeled)
            .sum();
        assert_eq!(labeled, 66);
    }

    #[test]
    fn zero_weight_ignores_pairing() {
        let f = small_data();
        let base = TrainConfig {
            ms_weight: 0.0,
            ..small_config()
        };
        let strict = TrainConfig {
            pair_rule: PairRule::DistinctImageAndPatch,
            ..base.clone()
        };
        assert_eq!(train(&f, &base).unwrap().params, train(&f, &strict).unwrap().params);
    }

    #[test]
    fn truth_only_adds_purity() {
        let mut c = SyntheticGaussianConfig::motivation(9);
        c.n_normal = 60;
        c.n_anomaly = 6;
        let (f, m) = generate_synthetic(&c).unwrap();
        let labels = m.image_labels.unwrap();
        let plain = train(&f, &small_config()).unwrap();
        let hooks = TrainHooks {
            truth: Some(&labels),
            ..Default::default()
        };
        let with = train_with(&f, &small_config(), hooks).unwrap();
        assert_eq!(plain.params, with.params);
        assert!(with.iterations.iter().all(|r| r.bank_purity.is_some()));
    }

    #[test]
    fn fallback_takes_lower_half() {
        let cfg = TrainConfig {
            sample_ratio: 1.0,
            ..small_config()
        };
        let mut r = rng::stream(0, 0);
        let c = choose_bank_images(&[0.9, 0.6, 0.7, 1.0, 0.55], &cfg, &mut r).unwrap();
        assert!(c.fallback);
        assert_eq!(c.images, vec![1, 2, 4]);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            batch_images: 0,
            ..small_config()
        };
        assert!(train(&small_data(), &cfg).is_err());
    }
}
