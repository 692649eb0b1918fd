use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_unit_rows, Matrix, NORMALIZED_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
    pub tau: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 5, tau: 0.07 }
    }
}

/// Weighted k-nearest-neighbour vote on cosine similarity.
///
/// Each of the `k` most similar training rows votes for its label with weight
/// `exp(sim / tau)`. Similarity ties prefer the lower training index and vote
/// ties go to the smallest class index.
pub fn knn_classify(train_x: &Matrix, train_y: &[usize], test_x: &Matrix, cfg: &KnnConfig) -> Result<Vec<usize>> {
    let n = train_x.rows();
    if train_y.len() != n {
        return Err(Error::LengthMismatch(n, train_y.len()));
    }
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::KTooLarge { k: cfg.k, n });
    }
    if !(cfg.tau > 0.0) {
        return Err(Error::NonPositiveTau(cfg.tau));
    }
    if test_x.rows() > 0 && train_x.cols() != test_x.cols() {
        return Err(Error::ShapeMismatch(format!(
            "train has {} features, test has {}",
            train_x.cols(),
            test_x.cols()
        )));
    }
    check_unit_rows(train_x, NORMALIZED_TOL)?;
    check_unit_rows(test_x, NORMALIZED_TOL)?;

    let classes = train_y.iter().copied().max().unwrap() + 1;
    let sims = test_x.matmul_nt(train_x)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut preds = Vec::with_capacity(test_x.rows());
    for q in 0..test_x.rows() {
        let row = sims.row(q);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let mut votes = vec![0.0; classes];
        for &j in &order[..cfg.k] {
            votes[train_y[j]] += (row[j] / cfg.tau).exp();
        }
        let mut best = 0;
        for c in 1..classes {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        preds.push(best);
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{l2_normalize_rows, Rng};

    fn data(seed: u64, n: usize) -> (Matrix, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let x = l2_normalize_rows(&Matrix::from_fn(n, 6, |_, _| rng.normal())).unwrap();
        let y = (0..n).map(|_| rng.below(3)).collect();
        (x, y)
    }

    #[test]
    fn k1_is_nearest_neighbour() {
        let (train, y) = data(1, 40);
        let (test, _) = data(2, 10);
        let preds = knn_classify(&train, &y, &test, &KnnConfig { k: 1, ..Default::default() }).unwrap();
        let sims = test.matmul_nt(&train).unwrap();
        for q in 0..10 {
            let nearest = (0..40).max_by(|&a, &b| sims.get(q, a).total_cmp(&sims.get(q, b))).unwrap();
            assert_eq!(preds[q], y[nearest]);
        }
    }

    #[test]
    fn duplicated_training_point_wins() {
        let (train, y) = data(3, 50);
        let test = train.select_rows(&[4, 17, 31]);
        for k in [1, 5, 20] {
            let preds = knn_classify(&train, &y, &test, &KnnConfig { k, ..Default::default() }).unwrap();
            assert_eq!(preds, vec![y[4], y[17], y[31]], "k={k}");
        }
    }

    #[test]
    fn constant_labels() {
        let (train, _) = data(4, 30);
        let (test, _) = data(5, 12);
        let preds = knn_classify(&train, &[2; 30], &test, &KnnConfig::default()).unwrap();
        assert_eq!(preds, vec![2; 12]);
    }

    #[test]
    fn vote_tie_goes_to_smaller_class() {
        let train = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let test = l2_normalize_rows(&Matrix::from_rows(&[[1.0, 1.0]]).unwrap()).unwrap();
        let preds = knn_classify(&train, &[1, 0], &test, &KnnConfig { k: 2, ..Default::default() }).unwrap();
        assert_eq!(preds, vec![0]);
    }

    #[test]
    fn errors() {
        let (train, y) = data(6, 4);
        assert!(matches!(
            knn_classify(&train, &y, &train, &KnnConfig { k: 5, ..Default::default() }),
            Err(Error::KTooLarge { k: 5, n: 4 })
        ));
        let raw = Matrix::filled(4, 6, 1.0);
        assert!(matches!(
            knn_classify(&raw, &y, &train, &KnnConfig { k: 1, ..Default::default() }),
            Err(Error::NotNormalized(0))
        ));
    }
}
