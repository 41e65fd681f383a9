//! Canned synthetic experiments: the two-Gaussian motivation study and the
//! contaminated toy training run.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::auroc;
use crate::feature_store::{
    contaminate, generate_synthetic, DatasetManifest, FeatureTensor, SyntheticGaussianConfig,
};
use crate::stats::{
    distance_histogram, log_grid, matching_ratio, prob_ratio, DistanceHistograms,
    GaussianPairModel, MatchingRatioReport, PairType,
};
use crate::train::{raw_image_scores, train_with, TrainConfig, TrainHooks, Validation};

/// Offset between the training and held-out data seeds.
const TEST_SEED_OFFSET: u64 = 0x9E37_79B9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub tau: f64,
    /// NN/AA with equal means.
    pub nn_aa: f64,
    /// NN/NA with equal means, sigma_N < sigma_A.
    pub nn_na_concentric: f64,
    /// NN/NA with distant means and equal sigmas.
    pub nn_na_separated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotivationReport {
    pub seed: u64,
    pub ratios: Vec<RatioRow>,
    pub matching: MatchingRatioReport,
    pub mean_distance_nn: f64,
    pub mean_distance_na: f64,
    pub mean_distance_aa: f64,
    #[serde(skip)]
    pub histograms: Option<DistanceHistograms>,
}

/// Analytic pair-probability ratios for the motivation setting.
pub fn ratio_table(n_tau: usize) -> Result<Vec<RatioRow>> {
    let dim = 16;
    let concentric = GaussianPairModel::concentric(dim, 1.0, 2f64.sqrt())?;
    let separated = GaussianPairModel::new(vec![0.0; dim], vec![1.5; dim], 1.0, 1.0)?;
    log_grid(0.01, 2.0, n_tau)
        .into_iter()
        .map(|tau| {
            Ok(RatioRow {
                tau,
                nn_aa: prob_ratio(&concentric, PairType::NormalNormal, PairType::AnomalyAnomaly, tau)?,
                nn_na_concentric: prob_ratio(
                    &concentric,
                    PairType::NormalNormal,
                    PairType::NormalAnomaly,
                    tau,
                )?,
                nn_na_separated: prob_ratio(
                    &separated,
                    PairType::NormalNormal,
                    PairType::NormalAnomaly,
                    tau,
                )?,
            })
        })
        .collect()
}

pub fn run_motivation(seed: u64, bins: usize) -> Result<MotivationReport> {
    let config = SyntheticGaussianConfig::motivation(seed);
    let (tensor, manifest) = generate_synthetic(&config)?;
    let labels = manifest.image_labels.expect("synthetic data is labeled");
    let matching = matching_ratio(&tensor, &labels)?;
    let hist = distance_histogram(&tensor, &labels, bins)?;
    Ok(MotivationReport {
        seed,
        ratios: ratio_table(25)?,
        matching,
        mean_distance_nn: hist.get(PairType::NormalNormal).mean_distance,
        mean_distance_na: hist.get(PairType::NormalAnomaly).mean_distance,
        mean_distance_aa: hist.get(PairType::AnomalyAnomaly).mean_distance,
        histograms: Some(hist),
    })
}

/// Contaminated-Gaussian training run with a held-out labeled test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub n_train_normal: usize,
    /// Anomalies per normal image moved into the training set.
    pub contamination: f64,
    pub n_test_normal: usize,
    pub n_test_anomaly: usize,
    pub train: TrainConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_train_normal: 1000,
            contamination: 0.1,
            n_test_normal: 500,
            n_test_anomaly: 500,
            train: TrainConfig {
                hidden1: 32,
                hidden2: 16,
                epochs: 60,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEpoch {
    pub epoch: usize,
    pub mean_total: f64,
    pub test_auroc: f64,
    pub bank_purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub seed: u64,
    pub iterations: usize,
    pub initial_auroc: f64,
    pub final_auroc: f64,
    pub final_bank_purity: f64,
    pub epochs: Vec<ToyEpoch>,
}

pub struct ToyData {
    pub train: FeatureTensor,
    pub train_truth: DatasetManifest,
    pub test: FeatureTensor,
    pub test_truth: DatasetManifest,
}

pub fn toy_data(config: &ToyConfig, seed: u64) -> Result<ToyData> {
    let n_anomaly = (config.contamination * config.n_train_normal as f64 + 1e-9).floor() as usize;
    let mut synth = SyntheticGaussianConfig::motivation(seed);
    synth.n_normal = config.n_train_normal;
    synth.n_anomaly = n_anomaly;
    let (pool, _) = generate_synthetic(&synth)?;
    let normal_ids: Vec<usize> = (0..config.n_train_normal).collect();
    let anomaly_ids: Vec<usize> = (config.n_train_normal..pool.n_images()).collect();
    let split = contaminate(
        &pool.select_images(&normal_ids)?,
        &pool.select_images(&anomaly_ids)?,
        config.contamination,
        seed,
    )?;

    let mut held_out = SyntheticGaussianConfig::motivation(seed.wrapping_add(TEST_SEED_OFFSET));
    held_out.n_normal = config.n_test_normal;
    held_out.n_anomaly = config.n_test_anomaly;
    let (test, test_truth) = generate_synthetic(&held_out)?;
    Ok(ToyData {
        train: split.train,
        train_truth: split.truth,
        test,
        test_truth,
    })
}

pub fn run_toy(config: &ToyConfig, seed: u64) -> Result<ToyReport> {
    let data = toy_data(config, seed)?;
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let truth = data.train_truth.image_labels.as_deref().expect("labeled");
    let test_labels = data.test_truth.image_labels.as_deref().expect("labeled");
    let positive: Vec<bool> = test_labels.iter().map(|l| l.is_anomaly()).collect();

    let init = crate::train::initial_params(data.train.dim(), &train_config);
    let initial_auroc = auroc(&raw_image_scores(&init, &data.test)?, &positive)?;

    let hooks = TrainHooks {
        truth: Some(truth),
        validation: Some(Validation {
            features: &data.test,
            labels: test_labels,
            select_best: false,
        }),
        ..Default::default()
    };
    let outcome = train_with(&data.train, &train_config, hooks)?;
    let final_auroc = auroc(&raw_image_scores(&outcome.params, &data.test)?, &positive)?;
    let epochs: Vec<ToyEpoch> = outcome
        .epochs
        .iter()
        .map(|e| ToyEpoch {
            epoch: e.epoch,
            mean_total: e.mean_total,
            test_auroc: e.validation_auroc.unwrap_or(f64::NAN),
            bank_purity: e.bank_purity.unwrap_or(f64::NAN),
        })
        .collect();
    Ok(ToyReport {
        seed,
        iterations: outcome.iterations.len(),
        initial_auroc,
        final_auroc,
        final_bank_purity: epochs.last().map_or(f64::NAN, |e| e.bank_purity),
        epochs,
    })
}
