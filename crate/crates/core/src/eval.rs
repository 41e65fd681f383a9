//! Image- and pixel-wise AUROC.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{FunadError, Result};
use crate::feature_store::DatasetManifest;
use crate::inference::AnomalyMap;

/// Area under the ROC curve as the normalized Mann-Whitney U statistic.
/// Tied positive/negative pairs count one half.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(FunadError::arg(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(FunadError::arg("NaN score"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(FunadError::UndefinedMetric(format!(
            "AUROC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Walk tie groups in ascending score order.
    let mut u = 0.0f64;
    let mut neg_below = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let (mut pos, mut neg) = (0u64, 0u64);
        for &k in &order[start..end] {
            if positive[k] {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        u += pos as f64 * neg_below as f64 + 0.5 * pos as f64 * neg as f64;
        neg_below += neg;
        start = end;
    }
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub image_auroc: f64,
    pub pixel_auroc: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_excluded: usize,
}

/// Image AUROC over non-excluded images and, when maps and masks are both
/// given, pixel AUROC pooled over all their pixels.
pub fn evaluate(
    scores: &[f64],
    maps: Option<&[AnomalyMap]>,
    truth: &DatasetManifest,
    exclusion: Option<&HashSet<usize>>,
) -> Result<EvalReport> {
    let labels = truth
        .image_labels
        .as_ref()
        .ok_or_else(|| FunadError::arg("evaluation needs image labels"))?;
    if labels.len() != scores.len() {
        return Err(FunadError::arg(format!(
            "{} scores for {} labelled images",
            scores.len(),
            labels.len()
        )));
    }
    let keep: Vec<usize> = (0..scores.len())
        .filter(|i| exclusion.is_none_or(|ex| !ex.contains(i)))
        .collect();
    let kept_scores: Vec<f64> = keep.iter().map(|&i| scores[i]).collect();
    let kept_labels: Vec<bool> = keep.iter().map(|&i| labels[i].is_anomaly()).collect();
    let image_auroc = auroc(&kept_scores, &kept_labels)?;
    let n_pos = kept_labels.iter().filter(|&&p| p).count();

    let pixel_auroc = match (maps, &truth.pixel_masks) {
        (Some(maps), Some(masks)) => {
            if maps.len() != scores.len() {
                return Err(FunadError::arg("one anomaly map per image is required"));
            }
            let mut px_scores = Vec::new();
            let mut px_labels = Vec::new();
            for &i in &keep {
                let map = &maps[i];
                if map.height != masks.height || map.width != masks.width {
                    return Err(FunadError::arg(format!(
                        "map {}x{} does not match mask {}x{}",
                        map.height, map.width, masks.height, masks.width
                    )));
                }
                px_scores.extend_from_slice(&map.values);
                px_labels.extend(masks.image(i).iter().map(|&b| b == 1));
            }
            Some(auroc(&px_scores, &px_labels)?)
        }
        _ => None,
    };
    Ok(EvalReport {
        image_auroc,
        pixel_auroc,
        n_pos,
        n_neg: keep.len() - n_pos,
        n_excluded: scores.len() - keep.len(),
    })
}
