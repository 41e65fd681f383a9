//! Brute-force Euclidean nearest neighbors over row-major point sets.

use rayon::prelude::*;

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest neighbor of every point among the others, restricted to pairs
/// accepted by `allowed`. Ties go to the lowest index.
pub fn nearest_neighbors<F>(points: &[f64], dim: usize, allowed: F) -> Vec<Option<usize>>
where
    F: Fn(usize, usize) -> bool + Sync,
{
    assert!(dim > 0 && points.len().is_multiple_of(dim));
    let n = points.len() / dim;
    (0..n)
        .into_par_iter()
        .map(|a| {
            let pa = &points[a * dim..(a + 1) * dim];
            let mut best: Option<(usize, f64)> = None;
            for b in 0..n {
                if b == a || !allowed(a, b) {
                    continue;
                }
                let d = sq_dist(pa, &points[b * dim..(b + 1) * dim]);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((b, d));
                }
            }
            best.map(|(b, _)| b)
        })
        .collect()
}

/// Pairs `(a, b)` with `a < b` that are each other's nearest neighbor.
pub fn mutual_pairs(nn: &[Option<usize>]) -> Vec<(usize, usize)> {
    nn.iter()
        .enumerate()
        .filter_map(|(a, &b)| {
            let b = b?;
            (a < b && nn[b] == Some(a)).then_some((a, b))
        })
        .collect()
}
