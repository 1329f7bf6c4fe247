//! Worked examples checked through the public API, with independently
//! computed expectations where the value is not a literal.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use semseg_core::prediction::{conditional_high_risk_corr, log_loss, Representation};
use semseg_core::pruning::{corr_distance_mst, prune_segment, CorrMatrix};
use semseg_core::separability::{
    compute_icc, compute_icor, mann_whitney_one_sided, spearman_rho, summarize, IccResult, IcorResult, PValueMethod,
};
use semseg_core::*;

fn names(n: &[&str]) -> Vec<String> {
    n.iter().map(|s| s.to_string()).collect()
}

fn frame(cols: &[(&str, Vec<f64>)]) -> MetricFrame {
    let t = cols[0].1.len();
    MetricFrame::new(
        (0..t as i64).map(|i| i * 30).collect(),
        cols.iter().map(|(n, _)| n.to_string()).collect(),
        cols.iter().map(|(_, v)| v.clone()).collect(),
    )
    .unwrap()
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[test]
fn spearman_rank_difference_formula() {
    let (x, y) = ([1.0, 2.0, 3.0], [3.0, 1.0, 2.0]);
    let d2: f64 = [4.0, 1.0, 1.0].iter().sum();
    let expected = 1.0 - 6.0 * d2 / (3.0 * (9.0 - 1.0));
    assert!((spearman_rho(&x, &y).unwrap() - expected).abs() < 1e-15);
    assert!((expected + 0.5).abs() < 1e-15);
}

#[test]
fn icc_and_icor_are_pair_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = noise(&mut rng, 200);
    let mix = |w: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        base.iter().map(|b| w * b + Distribution::<f64>::sample(&StandardNormal, rng)).collect()
    };
    let (a, b, c) = (mix(2.0, &mut rng), mix(1.0, &mut rng), mix(0.3, &mut rng));
    let f = frame(&[("a", a.clone()), ("b", b.clone()), ("c", c.clone())]);

    let one = BTreeMap::from([("S".to_string(), names(&["a", "b", "c"]))]);
    let icc = compute_icc(&f, &one).unwrap();
    let pairs = [(&a, &b), (&a, &c), (&b, &c)].map(|(x, y)| common::naive_spearman(x, y).unwrap());
    assert!((icc.per_segment[0].icc - pairs.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    assert_eq!(icc.per_segment[0].n_pairs, 3);

    let two = BTreeMap::from([("A".to_string(), names(&["a"])), ("B".to_string(), names(&["b", "c"]))]);
    let icor = compute_icor(&f, &two).unwrap();
    let cross = (common::naive_spearman(&a, &b).unwrap() + common::naive_spearman(&a, &c).unwrap()) / 2.0;
    assert!((icor.pairs[0].icor - cross).abs() < 1e-12);
}

#[test]
fn icor_of_independent_noise_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cols: Vec<(String, Vec<f64>)> = (0..6).map(|i| (format!("n{i}"), noise(&mut rng, 2000))).collect();
    let refs: Vec<(&str, Vec<f64>)> = cols.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
    let f = frame(&refs);
    let segs = BTreeMap::from([
        ("A".to_string(), names(&["n0", "n1", "n2"])),
        ("B".to_string(), names(&["n3", "n4", "n5"])),
    ]);
    let icor = compute_icor(&f, &segs).unwrap();
    assert!(icor.pairs[0].icor.abs() < 0.1, "{}", icor.pairs[0].icor);
}

#[test]
fn mann_whitney_exact_examples() {
    let r = mann_whitney_one_sided(&[0.9, 0.8, 0.7], &[0.1, 0.2]).unwrap();
    assert_eq!(r.u, 6.0);
    assert_eq!(r.method, PValueMethod::Exact);
    assert!((r.p - 0.1).abs() < 1e-15);
    assert!((r.p - common::enumerated_mwu_p(&[0.9, 0.8, 0.7], &[0.1, 0.2])).abs() < 1e-15);

    let r = mann_whitney_one_sided(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
    assert_eq!(r.u, 4.0);
    assert!((r.p - 1.0 / 6.0).abs() < 1e-15);

    let r = mann_whitney_one_sided(&[3.0], &[3.0]).unwrap();
    assert_eq!(r.u, 0.5);
    assert!(r.p >= 0.5);
}

#[test]
fn pruning_headline_arithmetic() {
    let injected = |icc: f64, icor: f64| {
        summarize(
            IccResult {
                per_segment: Vec::new(),
                omega_in: vec![icc],
                excluded: Vec::new(),
            },
            Some(IcorResult {
                pairs: Vec::new(),
                omega_out: vec![icor],
            }),
        )
        .unwrap()
    };
    let pre = injected(0.3820, 0.0791);
    let post = injected(0.3108, 0.0745);
    assert!((pre.delta.unwrap() - 0.3029).abs() < 1e-12);
    assert!((post.delta.unwrap() - 0.2363).abs() < 1e-12);

    let split = injected(1.0, 0.0);
    assert_eq!(split.icc_micro, 1.0);
    assert_eq!(split.delta, Some(1.0));
}

#[test]
fn mst_three_features_matches_brute_force() {
    let v = vec![vec![1.0, 0.9, 0.5], vec![0.9, 1.0, 0.8], vec![0.5, 0.8, 1.0]];
    let w: Vec<Vec<f64>> = v.iter().map(|r| r.iter().map(|x: &f64| 1.0 - x.abs()).collect()).collect();
    let edges = corr_distance_mst(&CorrMatrix::new(names(&["a", "b", "c"]), v).unwrap());
    let pairs: Vec<(&str, &str)> = edges.iter().map(|e| (e.feature_a.as_str(), e.feature_b.as_str())).collect();
    assert_eq!(pairs, [("a", "b"), ("b", "c")]);
    let total: f64 = edges.iter().map(|e| e.weight).sum();
    assert!((total - common::brute_force_mst_weight(&w)).abs() < 1e-12);
    assert!((total - 0.3).abs() < 1e-12);
}

#[test]
fn prune_rule_trace() {
    let corr = CorrMatrix::new(
        names(&["a", "b", "c"]),
        vec![vec![1.0, 0.99, 0.3], vec![0.99, 1.0, 0.3], vec![0.3, 0.3, 1.0]],
    )
    .unwrap();
    let out = prune_segment(&corr, 0.95, &BTreeSet::new()).unwrap();
    assert_eq!(out.removed.len(), 1);
    assert!(["a", "b"].contains(&out.removed[0].feature.as_str()));
    assert!(out.retained.contains(&"c".to_string()));
}

#[test]
fn pruning_without_redundancy_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = frame(&[
        ("a", noise(&mut rng, 300)),
        ("b", noise(&mut rng, 300)),
        ("c", noise(&mut rng, 300)),
        ("d", noise(&mut rng, 300)),
    ]);
    let segs = BTreeMap::from([("A".to_string(), names(&["a", "b"])), ("B".to_string(), names(&["c", "d"]))]);
    let r = run_pruning(&f, &segs, 0.95, &BTreeSet::new()).unwrap();
    assert_eq!(r.post_report, r.pre_report);
    assert!(r.removed.values().all(Vec::is_empty));
}

#[test]
fn log_loss_direct_evaluation() {
    let expected = -((0.9f64).ln() + (0.8f64).ln() + (0.9f64).ln()) / 3.0;
    let got = log_loss(&[1, 1, 0], &[0.9, 0.8, 0.1]).unwrap();
    assert!((got - expected).abs() < 1e-15);
    assert!((got - 0.144).abs() < 1e-3);
    assert!((log_loss(&[1], &[1.0 - 1e-6]).unwrap() - 1e-6).abs() < 1e-9);
}

#[test]
fn conditional_covariance_on_two_points() {
    let c = conditional_high_risk_corr(&[0.1, 0.2, 0.9, 0.95], &[0.1, 0.1, 0.3, 0.4], 0.5).unwrap();
    assert_eq!(c.n, 2);
    let expected = (0.3f64 - 0.35) * (0.9 - 0.925) + (0.4 - 0.35) * (0.95 - 0.925);
    assert!((c.covariance - expected).abs() < 1e-15);
    assert!((c.covariance - 0.0025).abs() < 1e-12);
    assert_eq!(c.correlation, None);
}

#[test]
fn conditional_correlation_of_independent_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pc: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
    let pr: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
    let c = conditional_high_risk_corr(&pc, &pr, 0.9).unwrap();
    assert!(c.correlation.unwrap().abs() < 0.15);
}

fn small_grid(seed: u64) -> EvalConfig {
    let mut cfg = EvalConfig::default_sweep(seed);
    cfg.n_splits = vec![3, 5];
    cfg.windows = vec![600];
    cfg
}

#[test]
fn residual_noise_carries_no_signal() {
    let synth = generate_telemetry(&SynthConfig::default()).unwrap();
    let tax = SegmentTaxonomy::bundled();
    let prep = prepare_default(&synth.frame, &tax).unwrap();
    let canonical = prep.canonical.frame();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let t = canonical.n_rows();
    let residual = MetricFrame::new(
        canonical.timestamps().to_vec(),
        (0..10).map(|i| format!("noise{i}")).collect(),
        (0..10).map(|_| noise(&mut rng, t)).collect(),
    )
    .unwrap();
    let report = evaluate_decomposition(canonical, &residual, &synth.faults, &small_grid(7)).unwrap();
    let r = report.summary_for(Representation::Residual).unwrap();
    let c = report.summary_for(Representation::Canonical).unwrap();
    let auc = r.mean_auc.unwrap();
    assert!((0.4..=0.6).contains(&auc), "{auc}");
    assert!(r.mean_risk >= 0.95 * r.mean_baseline_risk, "{} vs {}", r.mean_risk, r.mean_baseline_risk);
    assert!(c.mean_risk < r.mean_risk);
}

#[test]
fn pca_with_one_component_is_worse() {
    let synth = generate_telemetry(&SynthConfig::default()).unwrap();
    let tax = SegmentTaxonomy::bundled();
    let prep = prepare_default(&synth.frame, &tax).unwrap();
    let full = prep.canonical.concat(&prep.residual).unwrap();
    let cfg = small_grid(7);
    let risk = |k| {
        compare_representations(prep.canonical.frame(), prep.residual.frame(), full.frame(), &synth.faults, &cfg, Some(k))
            .unwrap()
            .summary_for(Representation::Pca)
            .unwrap()
            .mean_risk
    };
    let (r1, r6, r24) = (risk(1), risk(6), risk(24));
    assert!(r1 > r6 && r1 > r24, "k=1 {r1}, k=6 {r6}, k=24 {r24}");
}

#[test]
fn noiseless_synth_gives_perfect_segments() {
    let mut cfg = SynthConfig::default();
    cfg.n_samples = 1500;
    for s in &mut cfg.segments {
        s.noise_std = 0.0;
    }
    let synth = generate_telemetry(&cfg).unwrap();
    let prep = prepare_default(&synth.frame, &SegmentTaxonomy::bundled()).unwrap();
    let icc = compute_icc(prep.canonical.frame(), &prep.space.canonical).unwrap();
    // rolling-ratio segments mix the window median into each value, so only
    // pointwise-monotone transforms are expected to preserve ranks exactly
    for seg in icc.per_segment.iter().filter(|s| ["Cumulative", "Latency", "Network", "State"].contains(&s.segment.as_str())) {
        assert!((seg.icc - 1.0).abs() < 1e-12, "{} {}", seg.segment, seg.icc);
    }
}

#[test]
fn residual_features_are_independent_of_canonical() {
    let synth = generate_telemetry(&SynthConfig::default()).unwrap();
    let prep = prepare_default(&synth.frame, &SegmentTaxonomy::bundled()).unwrap();
    let (c, r) = (prep.canonical.frame(), prep.residual.frame());
    let bound = 3.0 / (c.n_rows() as f64).sqrt();
    let rhos: Vec<f64> = r
        .iter_columns()
        .flat_map(|(_, rv)| c.iter_columns().map(move |(_, cv)| spearman_rho(rv, cv).unwrap().abs()))
        .collect();
    // a 3-sigma per-pair bound is exceeded by ~0.3% of truly independent pairs
    let exceed = rhos.iter().filter(|&&v| v >= bound).count();
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    assert!(exceed * 100 <= rhos.len(), "{exceed} of {} pairs exceed {bound}", rhos.len());
    assert!(mean < bound / 2.0, "mean |rho| {mean}");
}

#[test]
fn fit_predict_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Array2::from_shape_fn((120, 4), |_| StandardNormal.sample(&mut rng));
    let y: Vec<u8> = x.rows().into_iter().map(|r| u8::from(r[0] + 0.5 * r[1] > 0.3)).collect();
    for kind in ModelKind::ALL {
        let spec = ModelSpec::new(kind, 9);
        let a = prediction::fit_predict(&spec, x.view(), &y, x.view()).unwrap();
        let b = prediction::fit_predict(&spec, x.view(), &y, x.view()).unwrap();
        assert_eq!(a.probabilities, b.probabilities, "{kind}");
    }
}
