//! Metrics checked against naive reference implementations.

use proptest::prelude::*;
use resa::metrics::{adjusted_rand_index, knn_classify, silhouette, KnnConfig};
use resa::numerics::{l2_normalize_rows, Matrix};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Silhouette straight from the definition, one point at a time.
fn brute_silhouette(x: &Matrix, labels: &[usize]) -> Vec<f64> {
    let n = x.rows();
    let k = labels.iter().max().unwrap() + 1;
    (0..n)
        .map(|i| {
            let mut sum = vec![0.0; k];
            let mut count = vec![0usize; k];
            for j in 0..n {
                if j != i {
                    sum[labels[j]] += dist(x.row(i), x.row(j));
                    count[labels[j]] += 1;
                }
            }
            let own = labels[i];
            if count[own] == 0 {
                return 0.0;
            }
            let a = sum[own] / count[own] as f64;
            let b = (0..k)
                .filter(|&c| c != own && count[c] > 0)
                .map(|c| sum[c] / count[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if a == b {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        })
        .collect()
}

/// ARI by counting agreeing and disagreeing pairs.
fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut total) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            both += (sa && sb) as u8 as f64;
            only_a += sa as u8 as f64;
            only_b += sb as u8 as f64;
            total += 1.0;
        }
    }
    let expected = only_a * only_b / total;
    let max = (only_a + only_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

fn brute_knn(train: &Matrix, ty: &[usize], test: &Matrix, k: usize, tau: f64) -> Vec<usize> {
    let classes = ty.iter().max().unwrap() + 1;
    (0..test.rows())
        .map(|q| {
            let mut sims: Vec<(f64, usize)> = (0..train.rows())
                .map(|j| (test.row(q).iter().zip(train.row(j)).map(|(a, b)| a * b).sum(), j))
                .collect();
            sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut votes = vec![0.0; classes];
            for &(s, j) in &sims[..k] {
                votes[ty[j]] += (s / tau).exp();
            }
            let mut best = 0;
            for c in 1..classes {
                if votes[c] > votes[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn points_and_labels() -> impl Strategy<Value = (Matrix, Vec<usize>)> {
    (2usize..=200, 1usize..=4, 2usize..=6).prop_flat_map(|(n, d, k)| {
        (
            proptest::collection::vec(-10i32..10, n * d),
            proptest::collection::vec(0..k, n),
        )
            .prop_filter("needs two clusters", |(_, l)| l.iter().any(|&c| c != l[0]))
            .prop_map(move |(v, l)| (Matrix::new(n, d, v.into_iter().map(f64::from).collect()).unwrap(), l))
    })
}

fn label_pairs() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..=200, 1usize..=6, 1usize..=6).prop_flat_map(|(n, ka, kb)| {
        (proptest::collection::vec(0..ka, n), proptest::collection::vec(0..kb, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn silhouette_matches_brute_force((x, labels) in points_and_labels()) {
        let fast = silhouette(&x, &labels).unwrap();
        let slow = brute_silhouette(&x, &labels);
        for (f, s) in fast.per_point.iter().zip(&slow) {
            prop_assert!((f - s).abs() <= 1e-12, "{f} vs {s}");
        }
        let mean = slow.iter().sum::<f64>() / slow.len() as f64;
        prop_assert!((fast.mean - mean).abs() <= 1e-12);
    }

    #[test]
    fn ari_matches_pair_counting((a, b) in label_pairs()) {
        let fast = adjusted_rand_index(&a, &b).unwrap();
        let slow = brute_ari(&a, &b);
        prop_assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
    }

    #[test]
    fn ari_is_symmetric_and_bounded((a, b) in label_pairs()) {
        let ab = adjusted_rand_index(&a, &b).unwrap();
        let ba = adjusted_rand_index(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab <= 1.0 + 1e-12);
        prop_assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn knn_matches_sorting_oracle(
        train in proptest::collection::vec(-5i32..5, 40 * 3),
        test in proptest::collection::vec(-5i32..5, 10 * 3),
        labels in proptest::collection::vec(0usize..3, 40),
        k in 1usize..=10,
    ) {
        let to_unit = |v: Vec<i32>, n: usize| {
            let v: Vec<f64> = v.into_iter().map(|x| f64::from(x) + 0.5).collect();
            l2_normalize_rows(&Matrix::new(n, 3, v).unwrap()).unwrap()
        };
        let train = to_unit(train, 40);
        let test = to_unit(test, 10);
        let cfg = KnnConfig { k, tau: 0.07 };
        prop_assert_eq!(knn_classify(&train, &labels, &test, &cfg).unwrap(), brute_knn(&train, &labels, &test, k, 0.07));
    }
}

#[test]
fn ari_hand_cases() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), -0.5);
    assert_eq!(adjusted_rand_index(&[3, 3, 1, 1, 2], &[0, 0, 5, 5, 4]).unwrap(), 1.0);
}
