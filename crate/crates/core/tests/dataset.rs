use afinet::iris::dataset::{
    dataset_digest, labeled_split, load_split, sidecar_csv, write_synth, SynthSpec,
};
use afinet::iris::io::{load_manifest, Split};
use afinet::iris::synth::Degradation;

/// Asymptotic Kolmogorov tail with the Stephens small-sample correction.
fn ks_uniform_p(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn ks_oracle_rejects_a_skewed_sample() {
    let skewed: Vec<f64> = (0..1000)
        .map(|i| 45.0 * (i as f64 / 1000.0).powi(2))
        .collect();
    assert!(ks_uniform_p(skewed, 0.0, 45.0) < 1e-6);
    let even: Vec<f64> = (0..1000)
        .map(|i| 45.0 * (i as f64 + 0.5) / 1000.0)
        .collect();
    assert!(ks_uniform_p(even, 0.0, 45.0) > 0.99);
}

fn small(train_classes: usize, train_samples: usize, test_classes: usize) -> SynthSpec {
    SynthSpec {
        train_classes,
        train_samples,
        test_classes,
        test_samples: 3,
        seed: 21,
        ..SynthSpec::default()
    }
}

#[test]
fn recorded_rotations_are_uniform() {
    let samples = small(50, 20, 0).generate().unwrap();
    assert_eq!(samples.len(), 1000);
    let csv = sidecar_csv(&samples);
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let col = reader
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "rotation_deg")
        .unwrap();
    let angles: Vec<f64> = reader
        .records()
        .map(|r| r.unwrap()[col].parse().unwrap())
        .collect();
    assert_eq!(angles.len(), 1000);
    assert!(angles.iter().all(|a| (0.0..=45.0).contains(a)));
    let p = ks_uniform_p(angles, 0.0, 45.0);
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn test_split_is_unrotated_and_disjoint() {
    let samples = small(3, 4, 2).generate().unwrap();
    let train: Vec<_> = samples.iter().filter(|s| s.split == Split::Train).collect();
    let test: Vec<_> = samples.iter().filter(|s| s.split == Split::Test).collect();
    assert_eq!((train.len(), test.len()), (12, 6));
    assert!(test.iter().all(|s| s.draw.rotation_deg == 0.0));
    assert!(train.iter().any(|s| s.draw.rotation_deg != 0.0));
    assert!(test.iter().all(|s| s.label >= 3));
    assert!(train.iter().all(|s| s.label < 3));
}

#[test]
fn undersized_specs_are_rejected() {
    assert!(small(1, 4, 0).generate().is_err());
    assert!(small(2, 1, 0).generate().is_err());
    assert!(small(2, 2, 1).generate().is_err());
    let bad = SynthSpec {
        degradation: Degradation {
            rotation_range_deg: (10.0, 0.0),
            ..Degradation::none()
        },
        ..small(2, 2, 0)
    };
    assert!(bad.generate().is_err());
}

#[test]
fn written_dataset_loads_back_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = small(3, 3, 2).generate().unwrap();
    write_synth(tmp.path(), &samples).unwrap();
    let manifest = load_manifest(&tmp.path().join("manifest.csv")).unwrap();
    for split in [Split::Train, Split::Test] {
        let loaded = load_split(&manifest, split).unwrap();
        let direct = labeled_split(
            samples
                .iter()
                .filter(|s| s.split == split)
                .map(|s| (s.label, s.image.clone())),
        )
        .unwrap();
        assert_eq!(loaded.labels, direct.labels);
        assert_eq!(dataset_digest(&loaded), dataset_digest(&direct));
    }
    let test = load_split(&manifest, Split::Test).unwrap();
    assert_eq!(test.labels, vec![0, 0, 0, 1, 1, 1]);
}

#[test]
fn digest_sees_labels_and_pixels() {
    let samples = small(2, 2, 0).generate().unwrap();
    let set = |f: &dyn Fn(usize) -> usize| {
        labeled_split(samples.iter().map(|s| (f(s.label), s.image.clone()))).unwrap()
    };
    let base = set(&|l| l);
    let swapped = set(&|l| 1 - l);
    assert_ne!(dataset_digest(&base), dataset_digest(&swapped));
    let mut touched = base.clone();
    touched.images[0].pixels[0] += 0.5;
    assert_ne!(dataset_digest(&base), dataset_digest(&touched));
}
