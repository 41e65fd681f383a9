use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, FeatureTensor, ImageLabel};
use crate::error::{FunadError, Result};
use crate::rng::{self, streams};

/// Two isotropic Gaussian classes, `x_N ~ N(mu_normal, sigma_normal^2 I)` and
/// `x_A ~ N(mu_anomaly, sigma_anomaly^2 I)`.
///
/// With `patches_per_image > 1` every image draws one class sample and each
/// patch adds `patch_noise * sigma_class` i.i.d. noise on top of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGaussianConfig {
    pub dim: usize,
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub mu_normal: Vec<f64>,
    pub mu_anomaly: Vec<f64>,
    pub sigma_normal: f64,
    pub sigma_anomaly: f64,
    #[serde(default = "default_patches")]
    pub patches_per_image: usize,
    #[serde(default = "default_patch_noise")]
    pub patch_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_patches() -> usize {
    1
}

fn default_patch_noise() -> f64 {
    0.1
}

impl SyntheticGaussianConfig {
    /// 1000 normals from N(0, I) and 1000 anomalies from N(1.5, 2I) in 16 dims.
    pub fn motivation(seed: u64) -> Self {
        Self {
            dim: 16,
            n_normal: 1000,
            n_anomaly: 1000,
            mu_normal: vec![0.0; 16],
            mu_anomaly: vec![1.5; 16],
            sigma_normal: 1.0,
            sigma_anomaly: 2f64.sqrt(),
            patches_per_image: 1,
            patch_noise: default_patch_noise(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(FunadError::arg("dim must be >= 1"));
        }
        if self.n_normal + self.n_anomaly == 0 {
            return Err(FunadError::arg("at least one sample is required"));
        }
        if self.patches_per_image == 0 {
            return Err(FunadError::arg("patches_per_image must be >= 1"));
        }
        if self.mu_normal.len() != self.dim || self.mu_anomaly.len() != self.dim {
            return Err(FunadError::arg(format!(
                "mean vectors must have length {}",
                self.dim
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sigma_normal) || !positive(self.sigma_anomaly) {
            return Err(FunadError::arg("sigmas must be positive and finite"));
        }
        if !(self.patch_noise.is_finite() && self.patch_noise >= 0.0) {
            return Err(FunadError::arg("patch_noise must be >= 0"));
        }
        if self.mu_normal.iter().chain(&self.mu_anomaly).any(|v| !v.is_finite()) {
            return Err(FunadError::arg("means must be finite"));
        }
        Ok(())
    }
}

/// Normals occupy the first `n_normal` images, anomalies the rest.
pub fn generate_synthetic(config: &SyntheticGaussianConfig) -> Result<(FeatureTensor, DatasetManifest)> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, streams::SYNTH);
    let n = config.n_normal + config.n_anomaly;
    let p = config.patches_per_image;
    let d = config.dim;
    let mut data = Vec::with_capacity(n * p * d);
    let mut labels = Vec::with_capacity(n);
    let mut base = vec![0.0f64; d];
    for i in 0..n {
        let (label, mu, sigma) = if i < config.n_normal {
            (ImageLabel::Normal, &config.mu_normal, config.sigma_normal)
        } else {
            (ImageLabel::Anomaly, &config.mu_anomaly, config.sigma_anomaly)
        };
        for (b, m) in base.iter_mut().zip(mu) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *b = m + sigma * z;
        }
        if p == 1 {
            data.extend(base.iter().map(|&v| v as f32));
        } else {
            let noise = config.patch_noise * sigma;
            for _ in 0..p {
                for &b in &base {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push((b + noise * z) as f32);
                }
            }
        }
        labels.push(label);
    }
    let tensor = FeatureTensor::new(n, p, d, 1, p, data)?;
    Ok((tensor, DatasetManifest::with_labels(labels)))
}
