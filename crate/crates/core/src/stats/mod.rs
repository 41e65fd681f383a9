//! Pairwise-distance statistics for two isotropic Gaussian classes: the
//! analytic within-distance probabilities and their empirical counterparts.
//!
//! For same-class pairs the difference of two draws is `N(0, 2σ²I)`, so the
//! probability of falling within `τ` is a central chi-squared CDF at
//! `τ²/2σ²`. Mixed pairs give a noncentral chi-squared at `τ²/(σ_N²+σ_A²)`.

mod chi2;
mod empirical;
mod pairs;

pub use chi2::{
    chi2_cdf, ln_gamma, noncentral_chi2_cdf, noncentral_chi2_cdf_tol, regularized_gamma_p,
    SERIES_TAIL_TOL,
};
pub use empirical::{
    distance_histogram, matching_ratio, DistanceHistograms, MatchingRatioReport, PairHistogram,
};
pub use pairs::{log_grid, pair_within_prob, prob_ratio, GaussianPairModel, PairType, PROB_FLOOR};
