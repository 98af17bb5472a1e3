use afinet::eval::{
    compute_roc, cosine, gradient_saliency, make_pairs, roc_points, saliency_map, score_pairs_deep,
    shifted_correlation, EvalReport, Pair, PairCounts, Regime, ReportMeta, DEFAULT_FAR_LEVELS,
};
use afinet::iris::column_shift;
use afinet::iris::synth::{synth_iris_class, Degradation};
use afinet::iris::NormalizedIris;
use afinet::model::{AfinetModel, ModelConfig};
use afinet_autograd::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-threshold counting straight from the definitions.
fn brute_force(genuine: &[f64], impostor: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|t| {
            let accepted_impostors = impostor.iter().filter(|&&s| s >= t).count();
            let rejected_genuine = genuine.iter().filter(|&&s| s < t).count();
            (
                t,
                accepted_impostors as f64 / impostor.len() as f64,
                rejected_genuine as f64 / genuine.len() as f64,
            )
        })
        .collect()
}

fn images(classes: usize, per_class: usize) -> (Vec<NormalizedIris>, Vec<usize>) {
    let degradation = Degradation {
        noise_std: 0.03,
        ..Degradation::none()
    };
    let mut imgs = Vec::new();
    let mut labels = Vec::new();
    for c in 0..classes {
        imgs.extend(synth_iris_class(300 + c as u64, per_class, &degradation).unwrap());
        labels.extend(std::iter::repeat(c).take(per_class));
    }
    (imgs, labels)
}

#[test]
fn exhaustive_pairs_of_two_by_two() {
    let set = make_pairs(&[0, 0, 1, 1], Regime::None, PairCounts::exhaustive(), 0).unwrap();
    let genuine = set.pairs.iter().filter(|p| p.genuine).count();
    assert_eq!((genuine, set.pairs.len() - genuine), (2, 4));
    assert!(set.pairs.iter().all(|p| p.a != p.b));
}

#[test]
fn pair_sampling_is_seeded() {
    let labels: Vec<usize> = (0..30).map(|i| i / 5).collect();
    let counts = PairCounts {
        genuine: Some(20),
        impostor: Some(50),
    };
    let a = make_pairs(&labels, Regime::Deg20, counts, 7).unwrap();
    let b = make_pairs(&labels, Regime::Deg20, counts, 7).unwrap();
    let c = make_pairs(&labels, Regime::Deg20, counts, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.pairs.len(), 70);
    assert!(a
        .pairs
        .iter()
        .all(|p| (labels[p.a] == labels[p.b]) == p.genuine && p.angle_deg == 20.0));
}

#[test]
fn insufficient_samples_rejected() {
    assert!(make_pairs(&[0, 0, 0], Regime::None, PairCounts::exhaustive(), 0).is_err());
    assert!(make_pairs(&[0, 1, 2], Regime::None, PairCounts::exhaustive(), 0).is_err());
}

#[test]
fn regime_45_is_a_16_column_shift() {
    assert_eq!(column_shift(Regime::Deg45.angle_deg(), 128), 16);
    assert_eq!(Regime::parse("45"), Some(Regime::Deg45));
    assert_eq!(Regime::parse("none"), Some(Regime::None));
}

#[test]
fn cosine_limits() {
    let f = [0.3f32, -0.4, 0.5];
    let neg: Vec<f32> = f.iter().map(|v| -v).collect();
    assert!((cosine(&f, &f) - 1.0).abs() < 1e-6);
    assert!((cosine(&f, &neg) + 1.0).abs() < 1e-6);
    assert_eq!(cosine(&f, &[0.0; 3]), 0.0);
}

#[test]
fn deep_scores_match_features() {
    let (imgs, labels) = images(2, 2);
    let model = AfinetModel::new(ModelConfig::desk().with_classes(2), 3).unwrap();
    let mut set = make_pairs(&labels, Regime::None, PairCounts::exhaustive(), 0).unwrap();
    set.pairs.push(Pair {
        a: 1,
        b: 1,
        genuine: true,
        angle_deg: 0.0,
    });
    let scores = score_pairs_deep(&model, &imgs, &set).unwrap();
    let refs: Vec<_> = imgs.iter().collect();
    let features = model.embed(&refs).unwrap();
    for (p, s) in set.pairs.iter().zip(&scores) {
        let dot: f64 = features[p.a]
            .iter()
            .zip(&features[p.b])
            .map(|(x, y)| *x as f64 * *y as f64)
            .sum();
        assert!((dot - s).abs() < 1e-6, "{dot} vs {s}");
        assert!((-1.0..=1.0 + 1e-6).contains(s));
    }
    assert!((scores.last().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn rotation_by_stride_multiple_keeps_deep_scores() {
    let (imgs, labels) = images(3, 3);
    let model = AfinetModel::new(ModelConfig::desk().with_classes(3), 4).unwrap();
    let none = make_pairs(&labels, Regime::None, PairCounts::exhaustive(), 1).unwrap();
    let rotated = make_pairs(&labels, Regime::Deg45, PairCounts::exhaustive(), 1).unwrap();
    let a = score_pairs_deep(&model, &imgs, &none).unwrap();
    let b = score_pairs_deep(&model, &imgs, &rotated).unwrap();
    for ((p, x), y) in none.pairs.iter().zip(&a).zip(&b) {
        if p.genuine {
            assert!(*y >= x - 1e-4, "{y} < {x}");
        }
    }
}

#[test]
fn hand_computed_roc() {
    let genuine = [0.6, 0.8, 0.9];
    let impostor = [0.1, 0.5, 0.7];
    let roc = compute_roc(&genuine, &impostor, &[0.5, 0.1]).unwrap();
    assert!((roc.eer - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(roc.points.len(), 6);
    // FAR ≤ 0.5 first reached at threshold 0.6 (FRR 0); FAR 0 at 0.8.
    assert_eq!(roc.frr_at_far[0].threshold, Some(0.6));
    assert_eq!(roc.frr_at_far[0].frr, Some(0.0));
    assert_eq!(roc.frr_at_far[1].frr, Some(1.0 / 3.0));
    assert!(!roc.frr_at_far[1].reliable);
}

#[test]
fn separated_scores_have_zero_error() {
    let roc = compute_roc(&[0.8, 0.9, 0.95], &[0.1, 0.2, 0.3], &DEFAULT_FAR_LEVELS).unwrap();
    assert_eq!(roc.eer, 0.0);
    assert!(roc.frr_at_far.iter().all(|f| f.frr == Some(0.0)));
}

#[test]
fn identical_distributions_give_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g: Vec<f64> = (0..2000).map(|_| rng.gen()).collect();
    let i: Vec<f64> = (0..2000).map(|_| rng.gen()).collect();
    let eer = compute_roc(&g, &i, &DEFAULT_FAR_LEVELS).unwrap().eer;
    assert!((eer - 0.5).abs() < 0.05, "{eer}");
}

#[test]
fn empty_and_non_finite_scores_rejected() {
    assert!(compute_roc(&[], &[0.1], &DEFAULT_FAR_LEVELS).is_err());
    assert!(compute_roc(&[0.1], &[], &DEFAULT_FAR_LEVELS).is_err());
    assert!(compute_roc(&[f64::NAN], &[0.1], &DEFAULT_FAR_LEVELS).is_err());
}

#[test]
fn report_round_trips_through_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g: Vec<f64> = (0..50).map(|_| rng.gen::<f64>() * 0.7 + 0.3).collect();
    let i: Vec<f64> = (0..80).map(|_| rng.gen::<f64>() * 0.7).collect();
    let meta = ReportMeta::new("afinet", Regime::Deg45, "abc", "def");
    let report = EvalReport::from_scores(meta, g, i, &DEFAULT_FAR_LEVELS).unwrap();
    let back = EvalReport::from_json(&report.to_json()).unwrap();
    assert_eq!(back, report);
    let mut tampered = report.clone();
    tampered.genuine[0] = 0.0;
    assert!(EvalReport::from_json(&tampered.to_json()).is_err());
    let csv = report.roc.to_csv();
    assert!(csv.starts_with("threshold,far,frr\n"));
    assert_eq!(csv.lines().count(), report.roc.points.len() + 1);
}

fn toy_scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    // Coarse values force ties between and within the sets.
    let score = (0u32..20).prop_map(|v| v as f64 / 19.0);
    (
        prop::collection::vec(score.clone(), 1..25),
        prop::collection::vec(score, 1..25),
    )
}

proptest! {
    #[test]
    fn roc_matches_brute_force((g, i) in toy_scores()) {
        let points = roc_points(&g, &i).unwrap();
        let oracle = brute_force(&g, &i);
        prop_assert_eq!(points.len(), oracle.len());
        for (p, (t, far, frr)) in points.iter().zip(oracle) {
            prop_assert_eq!((p.threshold, p.far, p.frr), (t, far, frr));
        }
        for w in points.windows(2) {
            prop_assert!(w[1].far <= w[0].far && w[1].frr >= w[0].frr);
        }
    }

    #[test]
    fn eer_invariant_under_monotone_maps((g, i) in toy_scores()) {
        let f = |v: &f64| (3.0 * v - 1.0).exp();
        let a = compute_roc(&g, &i, &DEFAULT_FAR_LEVELS).unwrap().eer;
        let mg: Vec<f64> = g.iter().map(f).collect();
        let mi: Vec<f64> = i.iter().map(f).collect();
        let b = compute_roc(&mg, &mi, &DEFAULT_FAR_LEVELS).unwrap().eer;
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn window_model_saliency_is_its_indicator() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_fn(&[1, 1, 8, 8], |_| rng.gen_range(-1.0f32..1.0));
    let window = Tensor::from_fn(&[1, 1, 8, 8], |i| {
        let (r, c) = (i / 8, i % 8);
        f32::from(u8::from((2..5).contains(&r) && (3..7).contains(&c)))
    });
    let map =
        gradient_saliency(&x, |v| Ok(v.mul(v.tape().constant(window.clone()))?.sum())).unwrap();
    assert_eq!(map, window.data().to_vec());
}

#[test]
fn flat_saliency_is_zero() {
    let x = Tensor::zeros(&[1, 1, 4, 4]);
    let map = gradient_saliency(&x, |v| Ok(v.scale(0.0).sum())).unwrap();
    assert_eq!(map, vec![0.0; 16]);
}

#[test]
fn saliency_moves_with_rotation() {
    let (imgs, _) = images(1, 1);
    let model = AfinetModel::new(ModelConfig::desk().with_classes(4), 8).unwrap();
    let a = saliency_map(&model, &imgs[0], 2).unwrap();
    let b = saliency_map(&model, &imgs[0].rotate(45.0), 2).unwrap();
    assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    let corr = shifted_correlation(&a, &b, 128, 16);
    assert!(corr > 0.99, "{corr}");
    assert!(saliency_map(&model, &imgs[0], 4).is_err());
}
