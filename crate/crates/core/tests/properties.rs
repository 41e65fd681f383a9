use proptest::prelude::*;

use funad_core::eval::auroc;
use funad_core::feature_store::{read_features, write_features, FeatureTensor, ImageLabel};
use funad_core::inference::{gaussian_kernel, render_map};
use funad_core::pseudo_label::{
    assign_labels, find_mutual_pairs, min_max_normalize, PseudoLabelBatch, Thresholds,
};
use funad_core::stats::{chi2_cdf, distance_histogram, matching_ratio, noncentral_chi2_cdf};

fn pairwise_auroc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut u = 0.0;
    let mut n = 0.0;
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            n += 1.0;
            if scores[i] > scores[j] {
                u += 1.0;
            } else if scores[i] == scores[j] {
                u += 0.5;
            }
        }
    }
    u / n
}

/// Scores drawn from a small alphabet so ties are common, with both classes present.
fn labelled_scores(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2..max_len)
        .prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..12).prop_map(|v| v as f64 * 0.25), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_map(|(s, mut p)| {
            p[0] = true;
            p[1] = false;
            (s, p)
        })
}

fn tensor_strategy() -> impl Strategy<Value = FeatureTensor> {
    (1usize..4, 1usize..4, 1usize..3, 1usize..6).prop_flat_map(|(n, gh, gw, dim)| {
        prop::collection::vec(-1e3f32..1e3, n * gh * gw * dim)
            .prop_map(move |data| FeatureTensor::new(n, gh * gw, dim, gh, gw, data).unwrap())
    })
}

fn points(n: usize, dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-10f32..10.0, n * dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn funf_round_trip_is_lossless(t in tensor_strategy()) {
        let bytes = write_features(&t).unwrap();
        prop_assert_eq!(read_features(&bytes).unwrap(), t);
    }

    #[test]
    fn auroc_matches_pairwise_count((s, p) in labelled_scores(300)) {
        prop_assert!((auroc(&s, &p).unwrap() - pairwise_auroc(&s, &p)).abs() < 1e-12);
    }

    #[test]
    fn auroc_ignores_monotone_transforms((s, p) in labelled_scores(200)) {
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        prop_assert!((auroc(&s, &p).unwrap() - auroc(&t, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auroc_of_negated_scores_is_complement((s, p) in labelled_scores(200)) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let sum = auroc(&s, &p).unwrap() + auroc(&neg, &p).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matching_ratio_ignores_image_order(
        data in points(40, 3),
        flags in prop::collection::vec(any::<bool>(), 40),
        perm in Just((0..40).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let labels: Vec<ImageLabel> = flags
            .iter()
            .map(|&a| if a { ImageLabel::Anomaly } else { ImageLabel::Normal })
            .collect();
        let t = FeatureTensor::from_vectors(3, data).unwrap();
        let shuffled = t.select_images(&perm).unwrap();
        let shuffled_labels: Vec<ImageLabel> = perm.iter().map(|&i| labels[i]).collect();
        let a = matching_ratio(&t, &labels).unwrap();
        let b = matching_ratio(&shuffled, &shuffled_labels).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn histogram_counts_every_pair_once(
        n in 2usize..30,
        bins in 1usize..20,
        seed_data in points(30, 2),
        flags in prop::collection::vec(any::<bool>(), 30),
    ) {
        let t = FeatureTensor::from_vectors(2, seed_data[..2 * n].to_vec()).unwrap();
        let labels: Vec<ImageLabel> = flags[..n]
            .iter()
            .map(|&a| if a { ImageLabel::Anomaly } else { ImageLabel::Normal })
            .collect();
        let h = distance_histogram(&t, &labels, bins).unwrap();
        let expected = (n * (n - 1) / 2) as u64;
        prop_assert_eq!(h.total_pairs(), expected);
        let binned: u64 = h.by_pair.iter().flat_map(|p| p.counts.iter()).sum();
        prop_assert_eq!(binned, expected);
    }

    #[test]
    fn labels_are_monotone_in_score(
        s in prop::collection::vec(0.0f64..=1.0, 1..100),
        tau_n in 0.05f64..0.5,
        gap in 0.0f64..0.45,
    ) {
        let thresholds = Thresholds { tau_b: 0.5, tau_n, tau_c: tau_n + gap };
        let mut batch = PseudoLabelBatch { s: s.clone(), ..Default::default() };
        assign_labels(&mut batch, &thresholds);
        for i in 0..s.len() {
            if batch.ambiguous[i] {
                prop_assert_eq!(batch.y[i], 1);
            }
            for j in 0..s.len() {
                if s[i] <= s[j] {
                    prop_assert!(batch.y[i] <= batch.y[j]);
                }
            }
        }
    }

    #[test]
    fn mutual_pairs_are_disjoint_and_ordered(n in 0usize..60, data in points(60, 4)) {
        let adapted: Vec<f64> = data[..4 * n].iter().map(|&v| v as f64).collect();
        let set = find_mutual_pairs(&adapted, 4);
        let mut seen = vec![false; n];
        for &(a, b) in &set.pairs {
            prop_assert!(a < b && b < n);
            prop_assert!(!seen[a] && !seen[b]);
            seen[a] = true;
            seen[b] = true;
        }
    }

    #[test]
    fn chi2_cdfs_are_monotone_in_x(
        dof in 1usize..40,
        lambda in 0.0f64..30.0,
        a in 0.0f64..80.0,
        b in 0.0f64..80.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(chi2_cdf(lo, dof).unwrap() <= chi2_cdf(hi, dof).unwrap() + 1e-15);
        let f_lo = noncentral_chi2_cdf(lo, dof, lambda).unwrap();
        let f_hi = noncentral_chi2_cdf(hi, dof, lambda).unwrap();
        prop_assert!(f_lo <= f_hi + 1e-12);
        prop_assert!((0.0..=1.0).contains(&f_lo) && (0.0..=1.0).contains(&f_hi));
    }

    #[test]
    fn min_max_lands_in_unit_interval(v in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let s = min_max_normalize(&v);
        prop_assert_eq!(s.len(), v.len());
        prop_assert!(s.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn rendered_maps_stay_within_patch_range(
        gh in 1usize..6,
        gw in 1usize..6,
        scores in prop::collection::vec(0.0f64..1.0, 36),
        oh in 1usize..40,
        ow in 1usize..40,
        sigma in 0.0f64..6.0,
    ) {
        let grid = &scores[..gh * gw];
        let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let map = render_map(grid, (gh, gw), (oh, ow), sigma).unwrap();
        prop_assert_eq!((map.height, map.width, map.values.len()), (oh, ow, oh * ow));
        for &v in &map.values {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn blur_kernel_sums_to_one(sigma in 0.01f64..20.0) {
        let k = gaussian_kernel(sigma);
        prop_assert_eq!(k.len() % 2, 1);
        prop_assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
