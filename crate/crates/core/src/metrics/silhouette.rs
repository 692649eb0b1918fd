use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distance {
    Euclidean,
    /// `1 − cos(x, y)`
    Cosine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Silhouette {
    pub per_point: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the per-point scores.
    pub std: f64,
}

pub fn silhouette(x: &Matrix, labels: &[usize]) -> Result<Silhouette> {
    silhouette_with(x, labels, Distance::Euclidean, 1)
}

/// Silhouette coefficient of every point.
///
/// `a(i)` is the mean distance to the other members of its label, `b(i)` the
/// smallest mean distance to any other label, `sc = (b − a) / max(a, b)`.
/// Members of singleton clusters get `sc = 0`, as does any point with `a = b = 0`.
/// With `threads > 1` the points are split into contiguous blocks; each score
/// is computed the same way regardless of the split.
pub fn silhouette_with(x: &Matrix, labels: &[usize], metric: Distance, threads: usize) -> Result<Silhouette> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch(n, labels.len()));
    }
    let n_labels = labels.iter().copied().max().unwrap() + 1;
    let mut sizes = vec![0usize; n_labels];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::SingleCluster);
    }
    let norms = x.row_norms();
    let score = |i: usize| -> f64 {
        if sizes[labels[i]] < 2 {
            return 0.0;
        }
        let mut sums = vec![0.0; n_labels];
        let xi = x.row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = x.row(j);
            let d = match metric {
                Distance::Euclidean => xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
                Distance::Cosine => {
                    let dot: f64 = xi.iter().zip(xj).map(|(a, b)| a * b).sum();
                    1.0 - dot / (norms[i] * norms[j])
                }
            };
            sums[labels[j]] += d;
        }
        let own = labels[i];
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_labels)
            .filter(|&l| l != own && sizes[l] > 0)
            .map(|l| sums[l] / sizes[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            (b - a) / denom
        } else {
            0.0
        }
    };

    let threads = threads.max(1).min(n);
    let per_point: Vec<f64> = if threads == 1 {
        (0..n).map(score).collect()
    } else {
        let chunk = n.div_ceil(threads);
        let score = &score;
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| s.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(score).collect::<Vec<f64>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("silhouette worker panicked")).collect()
        })
    };

    let mean = per_point.iter().sum::<f64>() / n as f64;
    let var = per_point.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
    Ok(Silhouette { per_point, mean, std: var.sqrt() })
}
