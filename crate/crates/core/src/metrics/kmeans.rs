use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Lloyd stops once no centroid moves farther than this.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iterations: 300, tolerance: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding, keeping the lowest-inertia restart.
pub fn kmeans(x: &Matrix, k: usize, cfg: &KMeansConfig, rng: &mut Rng) -> Result<KMeansResult> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..cfg.restarts.max(1) {
        let run = lloyd(x, seed_plus_plus(x, k, rng), cfg);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

fn seed_plus_plus(x: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = x.rows();
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // rounding can leave `pick` on a zero-weight point; step back to one with mass
            while d2[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            rng.below(n)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    x.select_rows(&chosen)
}

fn assign(x: &Matrix, centroids: &Matrix, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let (mut arg, mut low) = (0, f64::INFINITY);
        for c in 0..centroids.rows() {
            let d = sq_dist(x.row(i), centroids.row(c));
            if d < low {
                arg = c;
                low = d;
            }
        }
        *label = arg;
        inertia += low;
    }
    inertia
}

fn lloyd(x: &Matrix, mut centroids: Matrix, cfg: &KMeansConfig) -> KMeansResult {
    let (n, d, k) = (x.rows(), x.cols(), centroids.rows());
    let mut labels = vec![0; n];
    let mut inertia = assign(x, &centroids, &mut labels);
    for _ in 0..cfg.max_iterations {
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(x.row(a), centroids.row(labels[a]));
                        let db = sq_dist(x.row(b), centroids.row(labels[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                sums.row_mut(c).copy_from_slice(x.row(far));
                counts[c] = 1;
            }
            let inv = 1.0 / counts[c] as f64;
            for v in sums.row_mut(c) {
                *v *= inv;
            }
            shift = shift.max(sq_dist(sums.row(c), centroids.row(c)).sqrt());
        }
        centroids = sums;
        inertia = assign(x, &centroids, &mut labels);
        if shift < cfg.tolerance {
            break;
        }
    }
    KMeansResult { labels, centroids, inertia }
}
