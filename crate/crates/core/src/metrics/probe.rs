use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearProbeConfig {
    pub epochs: usize,
    /// Peak step size, decayed to zero along a cosine.
    pub lr: f64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        Self { epochs: 500, lr: 0.1 }
    }
}

/// Test accuracy of a softmax-regression classifier on frozen features.
///
/// Features are standardized with training statistics, then weights are fit by
/// full-batch gradient descent on the mean cross-entropy.
pub fn linear_probe(
    train_x: &Matrix,
    train_y: &[usize],
    test_x: &Matrix,
    test_y: &[usize],
    cfg: &LinearProbeConfig,
    rng: &mut Rng,
) -> Result<f64> {
    if train_x.rows() != train_y.len() {
        return Err(Error::LengthMismatch(train_x.rows(), train_y.len()));
    }
    if test_x.rows() != test_y.len() {
        return Err(Error::LengthMismatch(test_x.rows(), test_y.len()));
    }
    if train_x.rows() == 0 || test_x.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if train_x.cols() != test_x.cols() {
        return Err(Error::ShapeMismatch(format!(
            "train has {} features, test has {}",
            train_x.cols(),
            test_x.cols()
        )));
    }
    let (n, d) = train_x.shape();
    let classes = train_y.iter().chain(test_y).copied().max().unwrap() + 1;

    let mean: Vec<f64> = train_x.col_sums().iter().map(|s| s / n as f64).collect();
    let std: Vec<f64> = train_x.column_std().into_iter().map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
    let standardize = |x: &Matrix| Matrix::from_fn(x.rows(), d, |i, j| (x.get(i, j) - mean[j]) / std[j]);
    let xs = standardize(train_x);
    let ts = standardize(test_x);

    let mut w = Matrix::from_fn(d, classes, |_, _| 0.01 * rng.normal());
    let mut b = vec![0.0; classes];
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.epochs as f64).cos());
        let mut g = xs.matmul(&w)?;
        for i in 0..n {
            let row = g.row_mut(i);
            for (v, bias) in row.iter_mut().zip(&b) {
                *v += bias;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z * n as f64;
            }
            row[train_y[i]] -= 1.0 / n as f64;
        }
        let gw = xs.matmul_tn(&g)?;
        for (wv, gv) in w.data_mut().iter_mut().zip(gw.data()) {
            *wv -= lr * gv;
        }
        for (bv, gv) in b.iter_mut().zip(g.col_sums()) {
            *bv -= lr * gv;
        }
    }

    let logits = ts.matmul(&w)?;
    let mut correct = 0;
    for (i, &y) in test_y.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0;
        for c in 1..classes {
            if row[c] + b[c] > row[best] + b[best] {
                best = c;
            }
        }
        correct += usize::from(best == y);
    }
    Ok(correct as f64 / test_y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_blobs() {
        let mut rng = Rng::new(1);
        let x = Matrix::from_fn(80, 3, |i, _| rng.normal() * 0.3 + if i % 2 == 0 { 3.0 } else { -3.0 });
        let y: Vec<usize> = (0..80).map(|i| i % 2).collect();
        let acc = linear_probe(&x, &y, &x, &y, &LinearProbeConfig::default(), &mut Rng::new(2)).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn one_hot_features() {
        let y: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let x = Matrix::from_fn(50, 5, |i, j| f64::from(u8::from(y[i] == j)));
        let acc = linear_probe(&x, &y, &x, &y, &LinearProbeConfig::default(), &mut Rng::new(3)).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn shuffled_labels_are_at_chance() {
        let mut rng = Rng::new(4);
        let x = Matrix::from_fn(1000, 8, |_, _| rng.normal());
        let y: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let mut shuffled = y.clone();
        rng.shuffle(&mut shuffled);
        let (train, test) = (x.select_rows(&(0..500).collect::<Vec<_>>()), x.select_rows(&(500..1000).collect::<Vec<_>>()));
        let acc = linear_probe(&train, &shuffled[..500], &test, &shuffled[500..], &LinearProbeConfig::default(), &mut rng)
            .unwrap();
        assert!((acc - 0.1).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn length_mismatch() {
        let x = Matrix::zeros(3, 2);
        assert!(matches!(
            linear_probe(&x, &[0, 1], &x, &[0, 1, 0], &LinearProbeConfig::default(), &mut Rng::new(0)),
            Err(Error::LengthMismatch(3, 2))
        ));
    }
}
