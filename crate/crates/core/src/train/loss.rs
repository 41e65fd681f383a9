use crate::error::{FunadError, Result};
use crate::localnet::{backward_into, forward_batch, Gradients, LocalNetParams, Upstream};
use crate::pseudo_label::MutualPairSet;

pub const SCORE_CLAMP: f64 = 1e-7;

fn clamp(s: f64) -> f64 {
    s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let a = labels.iter().filter(|&&y| y == 1).count();
    (a, labels.len() - a)
}

fn check_scores(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(FunadError::arg(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Class-balanced binary cross-entropy; an absent class contributes 0.
pub fn balanced_bce(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_scores(scores, labels)?;
    let (n_a, n_n) = class_counts(labels);
    let (mut sum_a, mut sum_n) = (0.0, 0.0);
    for (&s, &y) in scores.iter().zip(labels) {
        if y == 1 {
            sum_a += clamp(s).ln();
        } else {
            sum_n += (1.0 - clamp(s)).ln();
        }
    }
    let mut loss = 0.0;
    if n_a > 0 {
        loss -= sum_a / n_a as f64;
    }
    if n_n > 0 {
        loss -= sum_n / n_n as f64;
    }
    Ok(loss)
}

/// d balanced_bce / d score; zero where the clamp is active.
pub fn balanced_bce_grad(scores: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    check_scores(scores, labels)?;
    let (n_a, n_n) = class_counts(labels);
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            if !(SCORE_CLAMP..=1.0 - SCORE_CLAMP).contains(&s) {
                0.0
            } else if y == 1 {
                -1.0 / (n_a as f64 * s)
            } else {
                1.0 / (n_n as f64 * (1.0 - s))
            }
        })
        .collect())
}

fn check_pairs(n: usize, pairs: &MutualPairSet) -> Result<()> {
    if let Some(&(a, b)) = pairs.pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
        return Err(FunadError::arg(format!("pair ({a}, {b}) outside {n} scores")));
    }
    Ok(())
}

/// Mean absolute score difference over the pairs; 0 without pairs.
pub fn mutual_smoothness(scores: &[f64], pairs: &MutualPairSet) -> Result<f64> {
    check_pairs(scores.len(), pairs)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pairs
        .pairs
        .iter()
        .map(|&(a, b)| (scores[a] - scores[b]).abs())
        .sum();
    Ok(sum / pairs.len() as f64)
}

/// Subgradient with `sign(0) = 0`.
pub fn mutual_smoothness_grad(scores: &[f64], pairs: &MutualPairSet) -> Result<Vec<f64>> {
    check_pairs(scores.len(), pairs)?;
    let mut g = vec![0.0; scores.len()];
    if pairs.is_empty() {
        return Ok(g);
    }
    let w = 1.0 / pairs.len() as f64;
    for &(a, b) in &pairs.pairs {
        let sign = (scores[a] - scores[b]).signum() * f64::from(scores[a] != scores[b]);
        g[a] += w * sign;
        g[b] -= w * sign;
    }
    Ok(g)
}

/// Inputs of one training step with labels and pairs held fixed.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs<'a> {
    /// Un-augmented batch rows; smoothness is scored on these.
    pub original: &'a [f64],
    /// Batch rows after perturbing ambiguous patches; BCE is scored on these.
    pub augmented: &'a [f64],
    pub labels: &'a [u8],
    pub pairs: &'a MutualPairSet,
    pub ms_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub l_phi: f64,
    pub l_ms: f64,
    pub total: f64,
}

pub fn composite_loss(params: &LocalNetParams, inputs: &StepInputs<'_>) -> Result<LossValues> {
    let s_aug = forward_batch(params, inputs.augmented)?.scores;
    let s_orig = forward_batch(params, inputs.original)?.scores;
    let l_phi = balanced_bce(&s_aug, inputs.labels)?;
    let l_ms = mutual_smoothness(&s_orig, inputs.pairs)?;
    Ok(LossValues {
        l_phi,
        l_ms,
        total: l_phi + inputs.ms_weight * l_ms,
    })
}

/// Loss values and parameter gradients. With `ms_weight == 0` the
/// smoothness gradient is never formed.
pub fn composite_gradient(
    params: &LocalNetParams,
    inputs: &StepInputs<'_>,
) -> Result<(LossValues, Gradients)> {
    let mut grads = LocalNetParams::zeros(params.shape());
    let aug_pass = forward_batch(params, inputs.augmented)?;
    let l_phi = balanced_bce(&aug_pass.scores, inputs.labels)?;
    let g_phi = balanced_bce_grad(&aug_pass.scores, inputs.labels)?;
    backward_into(
        params,
        inputs.augmented,
        &aug_pass,
        Upstream::score_only(&g_phi),
        &mut grads,
    )?;

    let orig_pass = forward_batch(params, inputs.original)?;
    let l_ms = mutual_smoothness(&orig_pass.scores, inputs.pairs)?;
    if inputs.ms_weight != 0.0 && !inputs.pairs.is_empty() {
        let g_ms: Vec<f64> = mutual_smoothness_grad(&orig_pass.scores, inputs.pairs)?
            .into_iter()
            .map(|g| g * inputs.ms_weight)
            .collect();
        backward_into(
            params,
            inputs.original,
            &orig_pass,
            Upstream::score_only(&g_ms),
            &mut grads,
        )?;
    }
    Ok((
        LossValues {
            l_phi,
            l_ms,
            total: l_phi + inputs.ms_weight * l_ms,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localnet::NetShape;
    use crate::rng;
    use rand::Rng as _;

    fn bce_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut terms_a = Vec::new();
        let mut terms_n = Vec::new();
        for i in 0..scores.len() {
            let s = scores[i].max(1e-7).min(1.0 - 1e-7);
            if labels[i] == 1 {
                terms_a.push(s.ln());
            } else {
                terms_n.push((1.0 - s).ln());
            }
        }
        let mean = |v: &Vec<f64>| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        -(mean(&terms_a) + mean(&terms_n))
    }

    #[test]
    fn bce_half_scores() {
        let l = balanced_bce(&[0.5; 4], &[0, 1, 1, 0]).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction() {
        let l = balanced_bce(&[1.0, 0.0, 1.0], &[1, 0, 1]).unwrap();
        assert!((0.0..1e-5).contains(&l));
    }

    #[test]
    fn bce_matches_scalar_oracle() {
        let mut r = rng::stream(11, 0);
        for _ in 0..20 {
            let n = r.random_range(1..200);
            let s: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            let y: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.3))).collect();
            assert!((balanced_bce(&s, &y).unwrap() - bce_oracle(&s, &y)).abs() < 1e-10);
        }
    }

    #[test]
    fn bce_single_class_batch() {
        let l = balanced_bce(&[0.25, 0.25], &[0, 0]).unwrap();
        assert!((l + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_grad_by_differences() {
        let s = [0.2, 0.7, 0.45, 0.9, 0.05];
        let y = [0, 1, 1, 0, 0];
        let g = balanced_bce_grad(&s, &y).unwrap();
        for k in 0..s.len() {
            let h = 1e-6;
            let mut p = s;
            p[k] += h;
            let mut m = s;
            m[k] -= h;
            let fd = (balanced_bce(&p, &y).unwrap() - balanced_bce(&m, &y).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn smoothness_examples() {
        let pairs = MutualPairSet {
            pairs: vec![(0, 1)],
        };
        assert!((mutual_smoothness(&[0.2, 0.6], &pairs).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(mutual_smoothness(&[0.3, 0.3], &pairs).unwrap(), 0.0);
        assert_eq!(mutual_smoothness(&[0.3], &MutualPairSet::default()).unwrap(), 0.0);
        assert!(mutual_smoothness(&[0.3], &pairs).is_err());
    }

    #[test]
    fn smoothness_matches_scalar_oracle() {
        let mut r = rng::stream(12, 0);
        let s: Vec<f64> = (0..100).map(|_| r.random::<f64>()).collect();
        let pairs: Vec<(usize, usize)> = (0..50).map(|k| (2 * k, 2 * k + 1)).collect();
        let mut acc = 0.0;
        for &(a, b) in &pairs {
            acc += if s[a] > s[b] { s[a] - s[b] } else { s[b] - s[a] };
        }
        let got = mutual_smoothness(&s, &MutualPairSet { pairs }).unwrap();
        assert!((got - acc / 50.0).abs() < 1e-12);
    }

    #[test]
    fn composite_total_is_weighted_sum() {
        let mut r = rng::stream(13, 0);
        let p = LocalNetParams::init(NetShape::new(4, 6, 3), &mut rng::stream(13, 1));
        let x: Vec<f64> = (0..4 * 8).map(|_| r.random_range(-1.0..1.0)).collect();
        let labels = [0, 1, 0, 0, 1, 0, 1, 0];
        let pairs = MutualPairSet {
            pairs: vec![(0, 3), (2, 5)],
        };
        let inputs = StepInputs {
            original: &x,
            augmented: &x,
            labels: &labels,
            pairs: &pairs,
            ms_weight: 2.5,
        };
        let v = composite_loss(&p, &inputs).unwrap();
        assert!((v.total - (v.l_phi + 2.5 * v.l_ms)).abs() < 1e-12);
        let (v2, _) = composite_gradient(&p, &inputs).unwrap();
        assert_eq!(v, v2);
    }
}
