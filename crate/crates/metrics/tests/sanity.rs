use cascade_core::data::{Column, Dataset, FeatureSchema};
use cascade_core::Matrix;
use cascade_metrics::{
    dcr_share, detection_score, evaluate, mia_score, mle_score, shape_scores, trend_scores,
    EvaluateConfig, LearnerConfig, MetricReport,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Two numerical features, one categorical feature and a binary target that
/// depends on all three.
fn table(n: usize, seed: u64) -> Dataset {
    let schema = FeatureSchema::new(vec![
        Column::numerical("a"),
        Column::categorical("g", &["x", "y", "z"]),
        Column::numerical("b"),
        Column::categorical("label", &["no", "yes"]).as_target(),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut cat, mut num, mut miss) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let g: u32 = rng.random_range(0..3);
        let e: f64 = StandardNormal.sample(&mut rng);
        let b = 0.6 * a + 0.5 * f64::from(g) + 0.5 * e;
        let logit = a - b + f64::from(g) - 1.0;
        let y = u32::from(rng.random::<f64>() < 1.0 / (1.0 + (-2.0 * logit).exp()));
        cat.extend([g, y]);
        num.extend([a, b]);
        miss.extend([false, rng.random::<f64>() < 0.1]);
    }
    Dataset::new(
        schema,
        Matrix::from_vec(n, 2, cat).unwrap(),
        Matrix::from_vec(n, 2, num).unwrap(),
        Matrix::from_vec(n, 2, miss).unwrap(),
    )
    .unwrap()
}

fn shuffled(ds: &Dataset, seed: u64) -> Dataset {
    let mut rows = ds.all_rows();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ds.subset(&rows)
}

#[test]
fn identity_sanity_suite() {
    let train = table(5000, 1);
    let test = table(2000, 2);
    let synth = shuffled(&train, 3);
    let cfg = LearnerConfig::default();

    let shape = shape_scores(&train, &synth).unwrap();
    assert_eq!(shape.shape, 1.0);
    assert_eq!(shape.wd_num, Some(0.0));
    assert_eq!(shape.jsd_cat, Some(0.0));
    let trend = trend_scores(&train, &synth).unwrap();
    assert!((trend.trend - 1.0).abs() < 1e-12);

    let det = detection_score(&train, &synth, 7, &cfg).unwrap();
    assert!(det.score >= 0.9, "{det:?}");

    let mle = mle_score(&train, &test, &synth, &cfg).unwrap();
    assert!(mle.score < 0.01, "{mle:?}");
}

#[test]
fn distinguishable_synth_is_detected() {
    let train = table(2000, 1);
    let mut synth = table(2000, 4);
    // shift one feature by two standard deviations
    for r in 0..synth.n_rows() {
        let v = synth.num_values.get(r, 0);
        synth.num_values.set(r, 0, v + 2.0);
    }
    let det = detection_score(&train, &synth, 0, &LearnerConfig::default()).unwrap();
    assert!(det.best_auc > 0.8 && det.score < 0.4, "{det:?}");
}

#[test]
fn leakage_lowers_membership_score() {
    let train = table(5000, 1);
    let test = table(5000, 2);
    let leaked = mia_score(&train, &test, &train, 3, &LearnerConfig::default()).unwrap();
    assert!(
        leaked.repetition_aucs.iter().all(|&a| a > 0.55),
        "{leaked:?}"
    );
    let fresh = mia_score(&train, &test, &table(5000, 9), 3, &LearnerConfig::default()).unwrap();
    assert!(fresh.score > leaked.score, "{fresh:?} vs {leaked:?}");
}

#[test]
fn dcr_of_copies() {
    let train = table(300, 1);
    let test = table(300, 2);
    assert_eq!(dcr_share(&train, &test, &train).unwrap(), 1.0);
    assert_eq!(dcr_share(&train, &test, &test).unwrap(), 0.0);
}

#[test]
fn scores_are_row_order_invariant() {
    let train = table(400, 1);
    let test = table(200, 2);
    let synth = table(400, 5);
    let mut cfg = EvaluateConfig::default();
    cfg.learner.gbdt.n_trees = 40;
    let a = evaluate(&train, &test, &synth, 11, &cfg).unwrap();
    let b = evaluate(&train, &test, &shuffled(&synth, 6), 11, &cfg).unwrap();
    assert_eq!(a.shape, b.shape);
    // Pearson sums in row order; only rounding may differ
    assert!((a.trend - b.trend).abs() < 1e-12);
    assert_eq!(a.dcr_share, b.dcr_share);
}

#[test]
fn report_ranges_and_serialization() {
    let train = table(400, 1);
    let test = table(200, 2);
    let synth = table(400, 5);
    let mut cfg = EvaluateConfig::default();
    cfg.learner.gbdt.n_trees = 40;
    let r = evaluate(&train, &test, &synth, 0, &cfg).unwrap();
    for v in [
        Some(r.shape),
        r.shape_cat,
        r.shape_num,
        Some(r.trend),
        r.trend_mixed,
        r.detection,
        r.dcr_share,
        r.mia,
    ] {
        let v = v.unwrap();
        assert!((0.0..=1.0).contains(&v), "{v}");
    }
    for v in [r.wd_num, r.jsd_cat, r.mle] {
        assert!(v.unwrap() >= 0.0);
    }
    let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    let mut csv = Vec::new();
    r.write_summary_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2);
}
