use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::tests::random_clip;
use crate::model::ModelConfig;
use crate::pose::{Label, SkeletonClip};
use crate::train::TrainConfig;

fn labels_of(bits: &[u8]) -> Vec<Label> {
    bits.iter().map(|&b| Label::from_index(b).unwrap()).collect()
}

#[test]
fn confusion_agreement_and_disagreement() {
    let labels = labels_of(&[1, 1, 0]);
    let cm = confusion(&labels, &labels).unwrap();
    assert_eq!(cm, ConfusionMatrix { true_pos: 2, true_neg: 1, false_pos: 0, false_neg: 0 });

    let flipped = labels_of(&[0, 0, 1]);
    let cm = confusion(&flipped, &labels).unwrap();
    assert_eq!(cm.true_pos, 0);
    assert_eq!(cm.true_neg, 0);
    assert_eq!(cm.false_pos + cm.false_neg, 3);

    assert!(confusion(&labels, &flipped[..2].to_vec()).is_err());
}

#[test]
fn confusion_matches_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1000;
    let preds: Vec<Label> = (0..n).map(|_| Label::from_index(rng.gen_range(0..2)).unwrap()).collect();
    let labels: Vec<Label> = (0..n).map(|_| Label::from_index(rng.gen_range(0..2)).unwrap()).collect();
    let cm = confusion(&preds, &labels).unwrap();

    // Independent tally.
    let (mut tp, mut tn, mut fp, mut fneg) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        let p = preds[i] == Label::Dystonia;
        let y = labels[i] == Label::Dystonia;
        match (p, y) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
        }
    }
    assert_eq!(cm, ConfusionMatrix { true_pos: tp, true_neg: tn, false_pos: fp, false_neg: fneg });
    assert_eq!(cm.total(), n as u64);
}

#[test]
fn metrics_spot_values() {
    let perfect = metrics(&ConfusionMatrix { true_pos: 5, true_neg: 5, false_pos: 0, false_neg: 0 }).unwrap();
    for name in METRIC_NAMES {
        assert_eq!(perfect.by_name(name), 1.0);
    }

    let one_sided = metrics(&ConfusionMatrix { true_pos: 3, true_neg: 0, false_pos: 0, false_neg: 1 }).unwrap();
    assert_eq!(one_sided.sensitivity, 0.75);
    assert_eq!(one_sided.specificity, 0.0);
    assert!(one_sided.zero_division.specificity);
    assert!(!one_sided.zero_division.sensitivity);

    let balanced = metrics(&ConfusionMatrix { true_pos: 8, true_neg: 8, false_pos: 2, false_neg: 2 }).unwrap();
    assert_eq!(balanced.precision, 0.8);
    assert_eq!(balanced.recall, 0.8);
    assert!((balanced.f1 - 0.8).abs() < 1e-15);

    assert!(metrics(&ConfusionMatrix::default()).is_err());
}

#[test]
fn metrics_match_brute_force_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let n = rng.gen_range(2..50);
        let preds: Vec<Label> = (0..n).map(|_| Label::from_index(rng.gen_range(0..2)).unwrap()).collect();
        let labels: Vec<Label> = (0..n).map(|_| Label::from_index(rng.gen_range(0..2)).unwrap()).collect();
        let m = metrics(&confusion(&preds, &labels).unwrap()).unwrap();

        let count = |f: &dyn Fn(Label, Label) -> bool| {
            preds.iter().zip(&labels).filter(|(&p, &y)| f(p, y)).count() as f64
        };
        let correct = count(&|p, y| p == y);
        assert_eq!(m.accuracy, correct / n as f64);
        let pos = count(&|_, y| y == Label::Dystonia);
        if pos > 0.0 {
            assert_eq!(m.sensitivity, count(&|p, y| p == Label::Dystonia && y == Label::Dystonia) / pos);
        }
        let neg = n as f64 - pos;
        if neg > 0.0 {
            assert_eq!(m.specificity, count(&|p, y| p == Label::Chorea && y == Label::Chorea) / neg);
        }
    }
}

proptest! {
    /// Accuracy is the prevalence-weighted convex combination of
    /// sensitivity and specificity (0/0 flags report 0, which keeps the
    /// identity because the corresponding prevalence weight is 0).
    #[test]
    fn accuracy_is_convex_combination(tp in 0u64..40, tn in 0u64..40, fp in 0u64..40, fneg in 0u64..40) {
        prop_assume!(tp + tn + fp + fneg > 0);
        let cm = ConfusionMatrix { true_pos: tp, true_neg: tn, false_pos: fp, false_neg: fneg };
        let m = metrics(&cm).unwrap();
        let total = cm.total() as f64;
        let prevalence = (tp + fneg) as f64 / total;
        let combined = m.sensitivity * prevalence + m.specificity * (1.0 - prevalence);
        prop_assert!((m.accuracy - combined).abs() < 1e-12);
    }
}

#[test]
fn percentile_linear_interpolation() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(percentile(&v, 0.0), 1.0);
    assert_eq!(percentile(&v, 100.0), 4.0);
    assert_eq!(percentile(&v, 50.0), 2.5);
    assert_eq!(percentile(&v, 25.0), 1.75);
}

#[test]
fn bootstrap_ci_examples() {
    // Identical fold values: a zero-width interval at the common value.
    let equal = bootstrap_ci(&[0.7, 0.7, 0.7], 500, 9);
    assert_eq!(equal.low, equal.high);
    assert_eq!(equal.low, equal.mean);
    assert!((equal.mean - 0.7).abs() < 1e-12);

    let a = bootstrap_ci(&[0.8, 0.85, 0.9], 1000, 42);
    let b = bootstrap_ci(&[0.8, 0.85, 0.9], 1000, 42);
    assert_eq!(a, b);

    // Two fold values: the resample-mean distribution is {0.8: 1/4,
    // 0.85: 1/2, 0.9: 1/4}, so the 2.5th/97.5th percentiles sit at the
    // extremes.
    let two = bootstrap_ci(&[0.8, 0.9], 100_000, 7);
    assert!((two.low - 0.8).abs() < 0.01, "low {}", two.low);
    assert!((two.high - 0.9).abs() < 0.01, "high {}", two.high);
}

proptest! {
    #[test]
    fn bootstrap_ci_contains_sample_mean(values in proptest::collection::vec(0.0f64..1.0, 2..10), seed in 0u64..500) {
        let ci = bootstrap_ci(&values, 300, seed);
        prop_assert!(ci.low <= ci.mean + 1e-12);
        prop_assert!(ci.high >= ci.mean - 1e-12);
    }
}

#[test]
fn ln_gamma_reference_values() {
    assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-12);
    assert!((ln_gamma(2.0)).abs() < 1e-13);
    assert!((ln_gamma(2.5) - 1.329_340_388_179_137f64.ln()).abs() < 1e-12);
}

/// Independent oracle: two-sided t(4) tail probability by Simpson
/// quadrature of the closed-form density 0.375·(1 + x²/4)^(-2.5).
fn t4_two_sided_by_quadrature(t: f64) -> f64 {
    fn pdf(x: f64) -> f64 {
        0.375 * (1.0 + x * x / 4.0).powf(-2.5)
    }
    fn simpson(a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut acc = pdf(a) + pdf(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * pdf(a + i as f64 * h);
        }
        acc * h / 3.0
    }
    let t = t.abs();
    // Near tail finely, far tail coarsely; truncation beyond 1e4 is ~3e-16.
    2.0 * (simpson(t, t + 50.0, 800_000) + simpson(t + 50.0, 1e4, 400_000))
}

#[test]
fn t_test_examples_and_quadrature_agreement() {
    // Values symmetric about the baseline: t = 0, p = 1.
    let sym = t_test_vs_chance(&[0.4, 0.6, 0.45, 0.55], 0.5);
    assert!(sym.t.abs() < 1e-12);
    assert!((sym.p_value - 1.0).abs() < 1e-9);

    // The spec's fold values against an independent CDF quadrature.
    let folds = [0.8, 0.85, 0.9, 0.82, 0.88];
    let test = t_test_vs_chance(&folds, 0.5);
    assert_eq!(test.df, 4);
    let oracle = t4_two_sided_by_quadrature(test.t);
    assert!(
        (test.p_value - oracle).abs() < 1e-6,
        "p {} vs quadrature {}",
        test.p_value,
        oracle
    );
    assert!(test.p_value < 0.05);

    // Continued fraction against quadrature across the range, to the
    // design tolerance.
    for t in [0.3, 0.8, 1.5, 2.132, 3.0, 6.0] {
        let p_cf = t_test_p_for(t);
        let p_q = t4_two_sided_by_quadrature(t);
        assert!((p_cf - p_q).abs() < 1e-10, "t = {t}: {p_cf} vs {p_q}");
    }

    // Zero variance degenerates with a flag.
    let d = t_test_vs_chance(&[0.8, 0.8, 0.8], 0.5);
    assert!(d.degenerate);
    assert_eq!(d.p_value, 0.0);
    let d1 = t_test_vs_chance(&[0.5, 0.5], 0.5);
    assert!(d1.degenerate);
    assert_eq!(d1.p_value, 1.0);
}

/// Two-sided p for a given t with 4 degrees of freedom via the library's
/// incomplete-beta route.
fn t_test_p_for(t: f64) -> f64 {
    regularized_incomplete_beta(2.0, 0.5, 4.0 / (4.0 + t * t))
}

proptest! {
    #[test]
    fn t_test_p_in_unit_interval(values in proptest::collection::vec(0.0f64..1.0, 2..12)) {
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-9);
        let t = t_test_vs_chance(&values, 0.5);
        prop_assert!((0.0..=1.0).contains(&t.p_value));
    }
}

fn make_clips(n0: usize, n1: usize) -> Vec<SkeletonClip> {
    let mut clips = Vec::new();
    for i in 0..n0 + n1 {
        let label = if i < n0 { Label::Chorea } else { Label::Dystonia };
        let mut c = random_clip(700 + i as u64, label);
        c.source.video_id = format!("v{i}");
        clips.push(c);
    }
    clips
}

#[test]
fn stratified_folds_partition_with_tight_proportions() {
    let clips = make_clips(13, 9);
    let k = 5;
    let folds = stratified_folds(&clips, k, 77);
    assert_eq!(folds.len(), k);

    let mut seen: Vec<usize> = folds.iter().flatten().cloned().collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..clips.len()).collect::<Vec<_>>());

    for (class, n) in [(Label::Chorea, 13usize), (Label::Dystonia, 9usize)] {
        for fold in &folds {
            let got = fold.iter().filter(|&&i| clips[i].label == class).count() as f64;
            let want = n as f64 / k as f64;
            assert!((got - want).abs() <= 1.0 + 1e-9, "class {class:?}: {got} vs {want}");
        }
    }

    assert_eq!(folds, stratified_folds(&clips, k, 77));
    assert_ne!(folds, stratified_folds(&clips, k, 78));
}

#[test]
fn cross_validation_smoke_runs_every_clip_once() {
    let clips = make_clips(7, 7);
    let mcfg = ModelConfig::tiny();
    let tcfg = TrainConfig {
        max_epochs: 1,
        batch_size: 8,
        augment_flip: false,
        ..TrainConfig::default()
    };
    let report = cross_validate(&clips, &mcfg, &tcfg, 2, 123).unwrap();
    assert_eq!(report.folds.len(), 2);
    let evaluated: usize = report.folds.iter().map(|f| f.n_eval).sum();
    assert_eq!(evaluated, clips.len());
    assert_eq!(report.summary.len(), METRIC_NAMES.len());

    // Seed-deterministic end to end.
    let rerun = cross_validate(&clips, &mcfg, &tcfg, 2, 123).unwrap();
    assert_eq!(
        serde_json::to_string(&report).unwrap(),
        serde_json::to_string(&rerun).unwrap()
    );

    // Too few clips per class for k folds is an error.
    assert!(cross_validate(&make_clips(2, 9), &mcfg, &tcfg, 3, 1).is_err());

    let table = report.table();
    assert!(table.contains("accuracy"));
    assert!(table.contains("95% CI"));
}
