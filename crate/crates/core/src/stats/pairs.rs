use serde::{Deserialize, Serialize};

use super::chi2::{chi2_cdf, noncentral_chi2_cdf};
use crate::error::{FunadError, Result};

/// Smallest denominator probability `prob_ratio` will divide by.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairType {
    #[serde(rename = "NN")]
    NormalNormal,
    #[serde(rename = "AA")]
    AnomalyAnomaly,
    #[serde(rename = "NA")]
    NormalAnomaly,
}

impl PairType {
    pub const ALL: [PairType; 3] = [
        PairType::NormalNormal,
        PairType::AnomalyAnomaly,
        PairType::NormalAnomaly,
    ];

    pub fn of(a_is_anomaly: bool, b_is_anomaly: bool) -> Self {
        match (a_is_anomaly, b_is_anomaly) {
            (false, false) => PairType::NormalNormal,
            (true, true) => PairType::AnomalyAnomaly,
            _ => PairType::NormalAnomaly,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            PairType::NormalNormal => "NN",
            PairType::AnomalyAnomaly => "AA",
            PairType::NormalAnomaly => "NA",
        }
    }
}

/// Normal and anomaly classes as isotropic Gaussians in `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPairModel {
    pub dim: usize,
    pub mu_normal: Vec<f64>,
    pub mu_anomaly: Vec<f64>,
    pub sigma_normal: f64,
    pub sigma_anomaly: f64,
}

impl GaussianPairModel {
    pub fn new(
        mu_normal: Vec<f64>,
        mu_anomaly: Vec<f64>,
        sigma_normal: f64,
        sigma_anomaly: f64,
    ) -> Result<Self> {
        let model = Self {
            dim: mu_normal.len(),
            mu_normal,
            mu_anomaly,
            sigma_normal,
            sigma_anomaly,
        };
        model.validate()?;
        Ok(model)
    }

    /// Equal-mean model with the given spreads.
    pub fn concentric(dim: usize, sigma_normal: f64, sigma_anomaly: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![0.0; dim], sigma_normal, sigma_anomaly)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.mu_normal.len() != self.dim || self.mu_anomaly.len() != self.dim {
            return Err(FunadError::arg("mean vectors must both have length dim >= 1"));
        }
        if !(self.sigma_normal > 0.0 && self.sigma_anomaly > 0.0) {
            return Err(FunadError::arg("sigmas must be positive"));
        }
        Ok(())
    }

    /// ‖μ_N − μ_A‖² / (σ_N² + σ_A²).
    pub fn noncentrality(&self) -> f64 {
        let gap: f64 = self
            .mu_normal
            .iter()
            .zip(&self.mu_anomaly)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        gap / (self.sigma_normal.powi(2) + self.sigma_anomaly.powi(2))
    }
}

/// Probability that two independent draws of the given pair type lie
/// closer than `tau`.
pub fn pair_within_prob(model: &GaussianPairModel, pair: PairType, tau: f64) -> Result<f64> {
    model.validate()?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(FunadError::Domain(format!("tau must be positive, got {tau}")));
    }
    let t2 = tau * tau;
    let sn2 = model.sigma_normal.powi(2);
    let sa2 = model.sigma_anomaly.powi(2);
    match pair {
        PairType::NormalNormal => chi2_cdf(t2 / (2.0 * sn2), model.dim),
        PairType::AnomalyAnomaly => chi2_cdf(t2 / (2.0 * sa2), model.dim),
        PairType::NormalAnomaly => {
            noncentral_chi2_cdf(t2 / (sn2 + sa2), model.dim, model.noncentrality())
        }
    }
}

pub fn prob_ratio(
    model: &GaussianPairModel,
    numerator: PairType,
    denominator: PairType,
    tau: f64,
) -> Result<f64> {
    let den = pair_within_prob(model, denominator, tau)?;
    if den < PROB_FLOOR {
        return Err(FunadError::Underflow {
            value: den,
            floor: PROB_FLOOR,
        });
    }
    Ok(pair_within_prob(model, numerator, tau)? / den)
}

/// `n` log-spaced points covering `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn concentric_16() -> GaussianPairModel {
        GaussianPairModel::new(vec![0.0; 16], vec![1.5; 16], 1.0, 2f64.sqrt()).unwrap()
    }

    #[test]
    fn nn_closed_form_two_dims() {
        let m = GaussianPairModel::concentric(2, 1.0, 3.0).unwrap();
        let p = pair_within_prob(&m, PairType::NormalNormal, 2f64.sqrt()).unwrap();
        assert!((p - (1.0 - (-0.5f64).exp())).abs() < 1e-14);
        assert!((p - 0.393_469_3).abs() < 1e-7);
    }

    #[test]
    fn equal_means_reduce_na_to_central() {
        let m = GaussianPairModel::concentric(8, 1.0, 2.0).unwrap();
        for tau in [0.3, 1.0, 4.0] {
            let na = pair_within_prob(&m, PairType::NormalAnomaly, tau).unwrap();
            let central = chi2_cdf(tau * tau / 5.0, 8).unwrap();
            assert!((na - central).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_classes_ratio_is_one() {
        let m = GaussianPairModel::concentric(16, 1.3, 1.3).unwrap();
        for tau in [0.01, 0.5, 2.0] {
            let r = prob_ratio(&m, PairType::NormalNormal, PairType::AnomalyAnomaly, tau).unwrap();
            assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn small_tau_ratio_approaches_power_law() {
        let r = prob_ratio(&concentric_16(), PairType::NormalNormal, PairType::AnomalyAnomaly, 0.01)
            .unwrap();
        assert!((r / 256.0 - 1.0).abs() < 0.01, "ratio {r}");
    }

    #[test]
    fn normal_pairs_beat_heterogeneous_pairs() {
        let m = concentric_16();
        for tau in [0.01, 0.1, 0.5] {
            let r = prob_ratio(&m, PairType::NormalNormal, PairType::NormalAnomaly, tau).unwrap();
            assert!(r > 1.0, "tau={tau} ratio={r}");
        }
    }

    #[test]
    fn non_positive_tau_rejected() {
        let m = concentric_16();
        assert!(matches!(
            pair_within_prob(&m, PairType::NormalNormal, 0.0),
            Err(FunadError::Domain(_))
        ));
        assert!(pair_within_prob(&m, PairType::NormalNormal, -1.0).is_err());
    }

    #[test]
    fn vanishing_denominator_reports_underflow() {
        let m = GaussianPairModel::concentric(400, 1.0, 2.0).unwrap();
        let err = prob_ratio(&m, PairType::NormalNormal, PairType::AnomalyAnomaly, 1e-3).unwrap_err();
        assert!(matches!(err, FunadError::Underflow { .. }));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.01, 2.0, 30);
        assert_eq!(g.len(), 30);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert!((g[29] - 2.0).abs() < 1e-12);
    }
}
