use super::*;
use crate::metrics::{adjusted_rand_index, kmeans, KMeansConfig};

fn plain(n_classes: usize, per_class: usize, separation: f64) -> DatasetSpec {
    DatasetSpec {
        n_classes,
        samples_per_class: per_class,
        ambient_dim: 16,
        latent_dim: 8,
        class_separation: separation,
        within_class_std: 1.0,
        ambient_noise: 0.0,
        warp: None,
        common_offset: 0.0,
        imbalance_factor: 1.0,
    }
}

#[test]
fn single_class() {
    let data = generate(&plain(1, 20, 3.0), &mut Rng::new(1)).unwrap();
    assert_eq!(data.labels, vec![0; 20]);
    assert_eq!(data.x.shape(), (20, 16));
}

#[test]
fn wide_separation_is_recovered_by_kmeans() {
    let data = generate(&plain(5, 60, 10.0), &mut Rng::new(2)).unwrap();
    let r = kmeans(&data.x, 5, &KMeansConfig::default(), &mut Rng::new(3)).unwrap();
    assert!(adjusted_rand_index(&data.labels, &r.labels).unwrap() >= 0.99);
}

#[test]
fn long_tail_ratio() {
    let mut spec = plain(100, 500, 2.0);
    spec.imbalance_factor = 1.0 / 20.0;
    spec.latent_dim = 16;
    let counts = spec.class_counts();
    assert_eq!(counts[0], 500);
    assert_eq!(counts[99], 25);
    let data = generate(&spec, &mut Rng::new(4)).unwrap();
    let mut seen = vec![0; 100];
    for &l in &data.labels {
        seen[l] += 1;
    }
    assert_eq!(seen, counts);
    let (max, min) = (*seen.iter().max().unwrap() as f64, *seen.iter().min().unwrap() as f64);
    assert!((max / min - 20.0).abs() < 0.5);
}

#[test]
fn means_are_separated_and_recoverable() {
    let spec = plain(4, 400, 4.0);
    let data = generate(&spec, &mut Rng::new(5)).unwrap();
    for a in 0..4 {
        for b in 0..a {
            let d: f64 = data.class_means.row(a).iter().zip(data.class_means.row(b)).map(|(x, y)| (x - y).powi(2)).sum();
            assert!(d.sqrt() >= 4.0 - 1e-9);
        }
    }
    for cls in 0..4 {
        let idx: Vec<usize> = (0..data.labels.len()).filter(|&i| data.labels[i] == cls).collect();
        let sub = data.x.select_rows(&idx);
        for (j, s) in sub.col_sums().iter().enumerate() {
            let emp = s / idx.len() as f64;
            // per-coordinate std of an orthonormal embedding of unit isotropic noise is at most 1
            assert!((emp - data.class_means.get(cls, j)).abs() <= 3.0 / (idx.len() as f64).sqrt() + 1e-12);
        }
    }
}

#[test]
fn deterministic_and_degenerate() {
    let spec = DatasetSpec::default();
    assert_eq!(generate(&spec, &mut Rng::new(6)).unwrap(), generate(&spec, &mut Rng::new(6)).unwrap());
    let mut bad = plain(3, 10, 1.0);
    bad.latent_dim = 32;
    assert!(matches!(generate(&bad, &mut Rng::new(0)), Err(Error::DegenerateSpec(_))));
    let mut bad = plain(3, 10, 1.0);
    bad.imbalance_factor = 0.0;
    assert!(matches!(generate(&bad, &mut Rng::new(0)), Err(Error::DegenerateSpec(_))));
}

#[test]
fn identity_augmentation() {
    let mut rng = Rng::new(7);
    let x = Matrix::from_fn(10, 4, |_, _| rng.normal());
    assert_eq!(augment(&x, &AugmentSpec::identity(), &mut rng), x);
}

#[test]
fn mask_prob_one_rejected() {
    assert!(AugmentSpec::new(0.1, 1.0, 0.0, AugmentMode::Standard).is_err());
    let json = r#"{"noise_sigma":0.1,"mask_prob":1.0,"scale_jitter":0.0,"mode":"Standard"}"#;
    assert!(serde_json::from_str::<AugmentSpec>(json).is_err());
}

#[test]
fn weak_mode_keeps_noise_only() {
    let spec = AugmentSpec::new(0.1, 0.5, 0.5, AugmentMode::Weak).unwrap();
    assert_eq!((spec.mask_prob(), spec.scale_jitter()), (0.0, 0.0));
}

#[test]
fn augmentation_is_reproducible() {
    let x = Matrix::filled(20, 8, 1.0);
    let spec = AugmentSpec::new(0.1, 0.0, 0.0, AugmentMode::Standard).unwrap();
    let a = augment(&x, &spec, &mut Rng::new(8));
    let b = augment(&x, &spec, &mut Rng::new(8));
    assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_ne!(a, x);
}

#[test]
fn weak_distorts_less_than_standard() {
    let data = generate(&DatasetSpec::default(), &mut Rng::new(9)).unwrap();
    let dist = |spec: &AugmentSpec, seed| {
        let out = augment(&data.x, spec, &mut Rng::new(seed));
        out.sub(&data.x).unwrap().row_norms().iter().sum::<f64>() / data.x.rows() as f64
    };
    for seed in 0..5 {
        assert!(dist(&AugmentSpec::weak(), seed) < dist(&AugmentSpec::standard(), seed));
    }
}
