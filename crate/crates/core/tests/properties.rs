mod common;

use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;

use semseg_core::baselines::pca_fit;
use semseg_core::prediction::{auc, label_horizon, time_splits, FaultEvent};
use semseg_core::pruning::{corr_distance_mst, prune_segment, CorrMatrix};
use semseg_core::separability::{circular_shift, mann_whitney_one_sided, spearman_rho};
use semseg_core::*;

fn tied_values(len: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..6).prop_map(|v| v as f64 * 0.5), len)
}

fn corr_matrix(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-8i32..=8, n * (n - 1) / 2).prop_map(move |upper| {
            let mut v = vec![vec![1.0; n]; n];
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    v[i][j] = upper[k] as f64 / 8.0;
                    v[j][i] = v[i][j];
                    k += 1;
                }
            }
            v
        })
    })
}

fn labelled_scores() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..=1, n),
            prop::collection::vec((0i32..10).prop_map(|v| v as f64 / 9.0), n),
        )
    })
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spearman_matches_oracle((x, y) in (3usize..30).prop_flat_map(|n| (tied_values(n), tied_values(n)))) {
        match (spearman_rho(&x, &y), common::naive_spearman(&x, &y)) {
            (Ok(a), Some(b)) => {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&a));
                prop_assert!((a - spearman_rho(&y, &x).unwrap()).abs() < 1e-15);
            }
            (Err(_), None) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn mst_is_minimal(v in corr_matrix(6)) {
        let n = v.len();
        let w: Vec<Vec<f64>> = v.iter().map(|r| r.iter().map(|x| 1.0 - x.abs()).collect()).collect();
        let edges = corr_distance_mst(&CorrMatrix::new(names(n), v).unwrap());
        prop_assert_eq!(edges.len(), n - 1);
        let total: f64 = edges.iter().map(|e| e.weight).sum();
        prop_assert!((total - common::brute_force_mst_weight(&w)).abs() < 1e-12);
    }

    #[test]
    fn mwu_matches_enumeration((pooled, k) in (2usize..=8).prop_flat_map(|n| (tied_values(n), 1..n))) {
        let (a, b) = pooled.split_at(k);
        let got = mann_whitney_one_sided(a, b).unwrap().p;
        prop_assert!((got - common::enumerated_mwu_p(a, b)).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pairs_and_ignores_monotone_maps((y, p) in labelled_scores()) {
        let got = auc(&y, &p);
        prop_assert_eq!(got, common::pairwise_auc(&y, &p));
        let mapped: Vec<f64> = p.iter().map(|v| (3.0 * v).exp() - 1.0).collect();
        prop_assert_eq!(got, auc(&y, &mapped));
    }

    #[test]
    fn pruning_is_idempotent_and_justified(v in corr_matrix(6), tau in 0.5f64..=1.0) {
        let corr = CorrMatrix::new(names(v.len()), v.clone()).unwrap();
        let keep = BTreeSet::new();
        let first = prune_segment(&corr, tau, &keep).unwrap();
        prop_assert_eq!(first.retained.len() + first.removed.len(), v.len());
        for r in &first.removed {
            prop_assert!(r.rho.abs() >= tau);
        }
        let idx: Vec<usize> = first.retained.iter().map(|n| n[1..].parse().unwrap()).collect();
        let sub: Vec<Vec<f64>> = idx.iter().map(|&i| idx.iter().map(|&j| v[i][j]).collect()).collect();
        let again = prune_segment(&CorrMatrix::new(first.retained.clone(), sub).unwrap(), tau, &keep).unwrap();
        prop_assert!(again.removed.is_empty());
        prop_assert_eq!(again.retained, first.retained);
    }

    #[test]
    fn circular_shift_preserves_values(x in prop::collection::vec(-1e3f64..1e3, 1..50), offset in 0usize..200) {
        let shifted = circular_shift(&x, offset);
        let (mut a, mut b) = (shifted.clone(), x.clone());
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        prop_assert_eq!(circular_shift(&shifted, x.len() - offset % x.len()), x);
    }

    #[test]
    fn labels_are_shift_consistent(
        faults in prop::collection::vec(0i64..3000, 0..8),
        delta in 1i64..900,
        shift in -10_000i64..10_000,
    ) {
        let ts: Vec<i64> = (0..100).map(|i| i * 30).collect();
        let log = |c: i64| FaultLog::new(faults.iter().map(|&t| FaultEvent { timestamp: t + c, magnitude: 1.0 }).collect());
        let moved: Vec<i64> = ts.iter().map(|t| t + shift).collect();
        let base = label_horizon(&ts, &log(0), delta).unwrap();
        prop_assert_eq!(&base, &label_horizon(&moved, &log(shift), delta).unwrap());
        for (i, &t) in ts.iter().enumerate() {
            let hit = faults.iter().any(|&f| f > t && f <= t + delta);
            prop_assert_eq!(base[i] == 1, hit);
        }
    }

    #[test]
    fn splits_expand_without_overlap(n in 2usize..10, extra in 0usize..500) {
        let t = 2 * (n + 1) + extra;
        let folds = time_splits(t, n).unwrap();
        prop_assert_eq!(folds.len(), n);
        for (i, f) in folds.iter().enumerate() {
            prop_assert_eq!(f.train.start, 0);
            prop_assert_eq!(f.train.end, f.test.start);
            prop_assert!(!f.test.is_empty());
            prop_assert_eq!(f.test.end, (i + 2) * t / (n + 1));
        }
        prop_assert_eq!(folds[n - 1].test.end, t);
    }

    #[test]
    fn pca_components_are_orthonormal_and_signed(data in prop::collection::vec(-10.0f64..10.0, 60)) {
        let x = Array2::from_shape_vec((20, 3), data).unwrap();
        let m = pca_fit(x.view(), 3).unwrap();
        let gram = m.components.dot(&m.components.t());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[[i, j]] - want).abs() < 1e-9);
            }
            let row = m.components.row(i);
            let pivot = (0..3).fold(0, |b, j| if row[j].abs() > row[b].abs() { j } else { b });
            prop_assert!(row[pivot] > 0.0);
        }
        prop_assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pivot_round_trip(cols in 1usize..5, rows in 1usize..20, seed in any::<u64>()) {
        let values: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| ((seed >> (c + r) % 32) % 97) as f64 + c as f64 * 0.25).collect())
            .collect();
        let frame = MetricFrame::new((0..rows as i64).map(|t| 1000 + 7 * t).collect(), names(cols), values).unwrap();
        let (back, summary) = pivot_to_wide(&frame.to_long_records()).unwrap();
        prop_assert_eq!(summary.duplicates, 0);
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn cleaning_invariants(
        data in prop::collection::vec(prop::option::weighted(0.7, (0i32..4).prop_map(f64::from)), 40),
        threshold in 0.0f64..=1.0,
    ) {
        let values: Vec<Vec<f64>> = data.chunks(8).map(|c| c.iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect();
        let frame = MetricFrame::new((0..8).collect(), names(5), values).unwrap();
        match clean_frame(&frame, threshold) {
            Ok((clean, summary)) => {
                prop_assert!(clean.is_complete());
                prop_assert_eq!(summary.retained.len() + summary.dropped.len(), 5);
                prop_assert_eq!(clean.columns(), summary.retained.as_slice());
                for (_, col) in clean.iter_columns() {
                    prop_assert!(col.iter().any(|v| *v != col[0]));
                }
                let (again, second) = clean_frame(&clean, threshold).unwrap();
                prop_assert_eq!(again, clean);
                prop_assert!(second.dropped.is_empty());
            }
            Err(e) => prop_assert!(matches!(e, Error::DegenerateFrame), "{e}"),
        }
    }
}
