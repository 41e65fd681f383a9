use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PairType;
use crate::error::{FunadError, Result};
use crate::feature_store::{FeatureTensor, ImageLabel};
use crate::neighbors::{mutual_pairs, nearest_neighbors, sq_dist};

/// Every patch as an f64 point plus whether its image is an anomaly.
fn samples(tensor: &FeatureTensor, labels: &[ImageLabel]) -> Result<(Vec<f64>, Vec<bool>)> {
    if labels.len() != tensor.n_images() {
        return Err(FunadError::arg(format!(
            "{} labels for {} images",
            labels.len(),
            tensor.n_images()
        )));
    }
    let points = tensor.data().iter().map(|&v| v as f64).collect();
    let classes = labels
        .iter()
        .flat_map(|l| std::iter::repeat_n(l.is_anomaly(), tensor.n_patches()))
        .collect();
    Ok((points, classes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairHistogram {
    pub pair: PairType,
    pub counts: Vec<u64>,
    pub n_pairs: u64,
    pub mean_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistograms {
    /// `bins + 1` edges spanning the smallest to the largest distance.
    pub edges: Vec<f64>,
    pub by_pair: Vec<PairHistogram>,
}

impl DistanceHistograms {
    pub fn get(&self, pair: PairType) -> &PairHistogram {
        self.by_pair
            .iter()
            .find(|h| h.pair == pair)
            .expect("all pair types present")
    }

    pub fn total_pairs(&self) -> u64 {
        self.by_pair.iter().map(|h| h.n_pairs).sum()
    }

    /// `lo,hi,NN,AA,NA` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,NN,AA,NA\n");
        let nn = self.get(PairType::NormalNormal);
        let aa = self.get(PairType::AnomalyAnomaly);
        let na = self.get(PairType::NormalAnomaly);
        for b in 0..self.edges.len() - 1 {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.edges[b], self.edges[b + 1], nn.counts[b], aa.counts[b], na.counts[b]
            ));
        }
        out
    }
}

fn pair_index(pair: PairType) -> usize {
    match pair {
        PairType::NormalNormal => 0,
        PairType::AnomalyAnomaly => 1,
        PairType::NormalAnomaly => 2,
    }
}

/// Histograms of all unordered pairwise Euclidean distances, split by pair type.
pub fn distance_histogram(
    tensor: &FeatureTensor,
    labels: &[ImageLabel],
    bins: usize,
) -> Result<DistanceHistograms> {
    if bins == 0 {
        return Err(FunadError::arg("bins must be >= 1"));
    }
    let (points, classes) = samples(tensor, labels)?;
    let dim = tensor.dim();
    let n = classes.len();
    if n < 2 {
        return Err(FunadError::arg("distance histogram needs at least 2 samples"));
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let (lo, hi) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for j in i + 1..n {
                let d = sq_dist(point(i), point(j)).sqrt();
                lo = lo.min(d);
                hi = hi.max(d);
            }
            (lo, hi)
        })
        .reduce(
            || (f64::INFINITY, f64::NEG_INFINITY),
            |a, b| (a.0.min(b.0), a.1.max(b.1)),
        );
    let width = (hi - lo) / bins as f64;

    // Per-row partials, combined in row order so the float sums do not
    // depend on the thread count.
    let rows: Vec<([Vec<u64>; 3], [f64; 3])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut counts = [vec![0u64; bins], vec![0u64; bins], vec![0u64; bins]];
            let mut sums = [0.0f64; 3];
            for j in i + 1..n {
                let d = sq_dist(point(i), point(j)).sqrt();
                let bin = if width > 0.0 {
                    (((d - lo) / width) as usize).min(bins - 1)
                } else {
                    0
                };
                let k = pair_index(PairType::of(classes[i], classes[j]));
                counts[k][bin] += 1;
                sums[k] += d;
            }
            (counts, sums)
        })
        .collect();

    let mut counts = [vec![0u64; bins], vec![0u64; bins], vec![0u64; bins]];
    let mut sums = [0.0f64; 3];
    for (c, s) in rows {
        for k in 0..3 {
            for (acc, v) in counts[k].iter_mut().zip(&c[k]) {
                *acc += v;
            }
            sums[k] += s[k];
        }
    }
    let edges = (0..=bins).map(|b| lo + width * b as f64).collect();
    let by_pair = PairType::ALL
        .iter()
        .map(|&pair| {
            let k = pair_index(pair);
            let n_pairs: u64 = counts[k].iter().sum();
            PairHistogram {
                pair,
                counts: counts[k].clone(),
                n_pairs,
                mean_distance: if n_pairs > 0 {
                    sums[k] / n_pairs as f64
                } else {
                    f64::NAN
                },
            }
        })
        .collect();
    Ok(DistanceHistograms { edges, by_pair })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingRatioReport {
    /// 2·|mutual NN pairs| / n_normal.
    pub true_normal: f64,
    /// 2·|mutual AA pairs| / n_anomaly.
    pub true_anomaly: f64,
    /// 2·|mutual NA pairs| / (n_normal + n_anomaly).
    pub false_ratio: f64,
    /// Number of mutually closest pairs of any type.
    pub n_pairs: usize,
    pub n_normal: usize,
    pub n_anomaly: usize,
    /// Set when the class is empty and its ratio was reported as 0.
    pub normal_class_missing: bool,
    pub anomaly_class_missing: bool,
    /// Normals that belong to some mutual pair.
    pub participating_normal: usize,
    pub participating_anomaly: usize,
    /// 2·|NN| / participating_normal.
    pub true_normal_participating: f64,
    /// 2·|AA| / participating_anomaly.
    pub true_anomaly_participating: f64,
    /// |NA| / n_pairs.
    pub false_ratio_participating: f64,
}

pub fn matching_ratio(tensor: &FeatureTensor, labels: &[ImageLabel]) -> Result<MatchingRatioReport> {
    let (points, classes) = samples(tensor, labels)?;
    let n = classes.len();
    if n < 2 {
        return Err(FunadError::arg("matching ratio needs at least 2 samples"));
    }
    let nn = nearest_neighbors(&points, tensor.dim(), |_, _| true);
    let pairs = mutual_pairs(&nn);
    let mut by_type = [0usize; 3];
    for &(a, b) in &pairs {
        by_type[pair_index(PairType::of(classes[a], classes[b]))] += 1;
    }
    let n_anomaly = classes.iter().filter(|&&a| a).count();
    let n_normal = n - n_anomaly;
    let ratio = |count: usize, total: usize| {
        if total == 0 {
            0.0
        } else {
            2.0 * count as f64 / total as f64
        }
    };
    let participating_normal = 2 * by_type[0] + by_type[2];
    let participating_anomaly = 2 * by_type[1] + by_type[2];
    Ok(MatchingRatioReport {
        true_normal: ratio(by_type[0], n_normal),
        true_anomaly: ratio(by_type[1], n_anomaly),
        false_ratio: ratio(by_type[2], n),
        n_pairs: pairs.len(),
        n_normal,
        n_anomaly,
        normal_class_missing: n_normal == 0,
        anomaly_class_missing: n_anomaly == 0,
        participating_normal,
        participating_anomaly,
        true_normal_participating: ratio(by_type[0], participating_normal),
        true_anomaly_participating: ratio(by_type[1], participating_anomaly),
        false_ratio_participating: ratio(by_type[2], 2 * pairs.len()),
    })
}
