//! Synthetic labelled data and vector-space augmentations.

mod io;

pub use io::{load_labels, load_matrix, save_labels, save_matrix, MatrixFormat};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Fixed random residual nonlinearity `x + strength · W₂ tanh(W₁ x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpSpec {
    pub hidden: usize,
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_classes: usize,
    /// Size of the largest class; the others shrink when `imbalance_factor < 1`.
    pub samples_per_class: usize,
    pub ambient_dim: usize,
    /// Dimension of the subspace carrying the class structure.
    pub latent_dim: usize,
    /// Minimum distance between class means, in units of `within_class_std`.
    pub class_separation: f64,
    pub within_class_std: f64,
    /// Isotropic noise added in every ambient direction after the embedding.
    pub ambient_noise: f64,
    pub warp: Option<WarpSpec>,
    /// Norm of a shared random vector added to every sample, so the data is not centred.
    pub common_offset: f64,
    /// Ratio of the smallest class count to the largest.
    pub imbalance_factor: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            samples_per_class: 256,
            ambient_dim: 64,
            latent_dim: 8,
            class_separation: 6.0,
            within_class_std: 1.0,
            ambient_noise: 1.5,
            warp: Some(WarpSpec { hidden: 64, strength: 1.0 }),
            common_offset: 16.0,
            imbalance_factor: 1.0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::DegenerateSpec(msg));
        if self.n_classes == 0 || self.samples_per_class == 0 {
            return bad("need at least one class and one sample per class".into());
        }
        if self.ambient_dim == 0 || self.latent_dim == 0 {
            return bad("dimensions must be at least 1".into());
        }
        if self.latent_dim > self.ambient_dim {
            return bad(format!("latent_dim {} exceeds ambient_dim {}", self.latent_dim, self.ambient_dim));
        }
        if !(self.imbalance_factor > 0.0 && self.imbalance_factor <= 1.0) {
            return bad(format!("imbalance_factor must lie in (0, 1], got {}", self.imbalance_factor));
        }
        if !(self.within_class_std > 0.0 && self.within_class_std.is_finite()) {
            return bad(format!("within_class_std must be positive, got {}", self.within_class_std));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return bad(format!("class_separation must be non-negative, got {}", self.class_separation));
        }
        if !(self.ambient_noise >= 0.0 && self.ambient_noise.is_finite()) {
            return bad(format!("ambient_noise must be non-negative, got {}", self.ambient_noise));
        }
        if self.n_classes > 2 && self.latent_dim == 1 && self.class_separation > 0.0 {
            // more than two points on a 1-d sphere cannot be separated
            return bad("latent_dim 1 holds at most two separated classes".into());
        }
        if !(self.common_offset >= 0.0 && self.common_offset.is_finite()) {
            return bad(format!("common_offset must be non-negative, got {}", self.common_offset));
        }
        if let Some(w) = &self.warp {
            if w.hidden == 0 || !w.strength.is_finite() {
                return bad("warp needs a hidden width ≥ 1 and finite strength".into());
            }
        }
        Ok(())
    }

    /// Per-class sample counts: `round(n_max · γ^(c/(C−1)))`, at least 1.
    pub fn class_counts(&self) -> Vec<usize> {
        let c = self.n_classes;
        (0..c)
            .map(|i| {
                let frac = if c > 1 { i as f64 / (c - 1) as f64 } else { 0.0 };
                ((self.samples_per_class as f64 * self.imbalance_factor.powf(frac)).round() as usize).max(1)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
    /// Ambient class means (offset included) ignoring the warp; these are the true means when no warp is set.
    pub class_means: Matrix,
}

/// Draws a labelled dataset. Rows come out shuffled.
pub fn generate(spec: &DatasetSpec, rng: &mut Rng) -> Result<Dataset> {
    spec.validate()?;
    let (c, k, d) = (spec.n_classes, spec.latent_dim, spec.ambient_dim);
    let latent_means = class_means(spec, &mut rng.derive(1));

    // orthonormal map from the latent space into the ambient space
    let mut basis_rng = rng.derive(2);
    let raw = Matrix::from_fn(d, k, |_, _| basis_rng.normal());
    let basis = gram_schmidt(&raw)?;
    let embed = |latent: &[f64]| -> Vec<f64> {
        (0..d).map(|a| (0..k).map(|j| basis.get(a, j) * latent[j]).sum()).collect()
    };
    let mut means = Matrix::zeros(c, d);
    for cls in 0..c {
        means.row_mut(cls).copy_from_slice(&embed(latent_means.row(cls)));
    }

    let counts = spec.class_counts();
    let n: usize = counts.iter().sum();
    let mut labels = Vec::with_capacity(n);
    for (cls, &count) in counts.iter().enumerate() {
        labels.extend(std::iter::repeat_n(cls, count));
    }
    let mut sample_rng = rng.derive(3);
    sample_rng.shuffle(&mut labels);

    let mut x = Matrix::zeros(n, d);
    let mut latent = vec![0.0; k];
    for (i, &cls) in labels.iter().enumerate() {
        for (j, v) in latent.iter_mut().enumerate() {
            *v = latent_means.get(cls, j) + spec.within_class_std * sample_rng.normal();
        }
        let row = x.row_mut(i);
        row.copy_from_slice(&embed(&latent));
        if spec.ambient_noise > 0.0 {
            for v in row.iter_mut() {
                *v += spec.ambient_noise * sample_rng.normal();
            }
        }
    }

    if let Some(w) = &spec.warp {
        let mut warp_rng = rng.derive(4);
        let w1 = Matrix::from_fn(d, w.hidden, |_, _| warp_rng.normal() / (d as f64).sqrt());
        let w2 = Matrix::from_fn(w.hidden, d, |_, _| warp_rng.normal() / (w.hidden as f64).sqrt());
        let scale = spec.within_class_std;
        let hidden = x.scale(1.0 / scale).matmul(&w1)?.map(f64::tanh);
        let residual = hidden.matmul(&w2)?.scale(w.strength * scale);
        x.add_assign(&residual)?;
    }
    if spec.common_offset > 0.0 {
        let mut offset_rng = rng.derive(5);
        let dir: Vec<f64> = (0..d).map(|_| offset_rng.normal()).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let shift: Vec<f64> = dir.iter().map(|v| v * spec.common_offset / norm).collect();
        for i in 0..n {
            for (v, s) in x.row_mut(i).iter_mut().zip(&shift) {
                *v += s;
            }
        }
        for cls in 0..c {
            for (v, s) in means.row_mut(cls).iter_mut().zip(&shift) {
                *v += s;
            }
        }
    }
    Ok(Dataset { x, labels, class_means: means })
}

/// Class means on a sphere, redrawn until every pair is at least
/// `class_separation · within_class_std` apart. The radius grows slowly if the
/// constraint keeps failing.
fn class_means(spec: &DatasetSpec, rng: &mut Rng) -> Matrix {
    let (c, k) = (spec.n_classes, spec.latent_dim);
    let min_dist = spec.class_separation * spec.within_class_std;
    let mut radius = min_dist.max(f64::MIN_POSITIVE);
    let mut means = Matrix::zeros(c, k);
    if min_dist == 0.0 {
        return means;
    }
    let mut placed = 0;
    let mut failures = 0;
    while placed < c {
        let mut v: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        for x in v.iter_mut() {
            *x *= radius / norm;
        }
        let ok = (0..placed).all(|p| {
            let d2: f64 = means.row(p).iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= min_dist
        });
        if ok {
            means.row_mut(placed).copy_from_slice(&v);
            placed += 1;
            failures = 0;
        } else {
            failures += 1;
            if failures == 200 {
                // restart on a slightly larger sphere
                radius *= 1.05;
                placed = 0;
                failures = 0;
            }
        }
    }
    means
}

fn gram_schmidt(raw: &Matrix) -> Result<Matrix> {
    let (d, k) = raw.shape();
    let mut q = Matrix::zeros(d, k);
    for j in 0..k {
        let mut v = raw.column(j);
        for _ in 0..2 {
            for p in 0..j {
                let dot: f64 = (0..d).map(|a| q.get(a, p) * v[a]).sum();
                for (a, x) in v.iter_mut().enumerate() {
                    *x -= dot * q.get(a, p);
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateSpec("random basis is rank deficient".into()));
        }
        for (a, x) in v.iter().enumerate() {
            q.set(a, j, x / norm);
        }
    }
    Ok(q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentMode {
    Standard,
    /// Additive noise only.
    Weak,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AugmentFields", into = "AugmentFields")]
pub struct AugmentSpec {
    noise_sigma: f64,
    mask_prob: f64,
    scale_jitter: f64,
    mode: AugmentMode,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AugmentFields {
    noise_sigma: f64,
    mask_prob: f64,
    scale_jitter: f64,
    mode: AugmentMode,
}

impl TryFrom<AugmentFields> for AugmentSpec {
    type Error = Error;
    fn try_from(f: AugmentFields) -> Result<Self> {
        AugmentSpec::new(f.noise_sigma, f.mask_prob, f.scale_jitter, f.mode)
    }
}

impl From<AugmentSpec> for AugmentFields {
    fn from(s: AugmentSpec) -> Self {
        AugmentFields { noise_sigma: s.noise_sigma, mask_prob: s.mask_prob, scale_jitter: s.scale_jitter, mode: s.mode }
    }
}

impl AugmentSpec {
    /// Weak mode zeroes `mask_prob` and `scale_jitter` regardless of the values given.
    pub fn new(noise_sigma: f64, mask_prob: f64, scale_jitter: f64, mode: AugmentMode) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::DegenerateSpec(format!("noise_sigma must be non-negative, got {noise_sigma}")));
        }
        if !(0.0..1.0).contains(&mask_prob) {
            return Err(Error::DegenerateSpec(format!("mask_prob must lie in [0, 1), got {mask_prob}")));
        }
        if !(scale_jitter >= 0.0 && scale_jitter.is_finite()) {
            return Err(Error::DegenerateSpec(format!("scale_jitter must be non-negative, got {scale_jitter}")));
        }
        let (mask_prob, scale_jitter) = match mode {
            AugmentMode::Standard => (mask_prob, scale_jitter),
            AugmentMode::Weak => (0.0, 0.0),
        };
        Ok(Self { noise_sigma, mask_prob, scale_jitter, mode })
    }

    pub fn standard() -> Self {
        Self { noise_sigma: 0.25, mask_prob: 0.2, scale_jitter: 0.2, mode: AugmentMode::Standard }
    }

    pub fn weak() -> Self {
        Self { noise_sigma: 0.1, mask_prob: 0.0, scale_jitter: 0.0, mode: AugmentMode::Weak }
    }

    pub fn identity() -> Self {
        Self { noise_sigma: 0.0, mask_prob: 0.0, scale_jitter: 0.0, mode: AugmentMode::Standard }
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn mask_prob(&self) -> f64 {
        self.mask_prob
    }

    pub fn scale_jitter(&self) -> f64 {
        self.scale_jitter
    }

    pub fn mode(&self) -> AugmentMode {
        self.mode
    }
}

/// Per row: scale by `1 + u` with `u ~ U[−j, j]`, zero each coordinate with
/// probability `p`, then add `N(0, σ²)` noise. Primitives with a zero
/// parameter are skipped entirely, so the identity spec returns `x` unchanged.
pub fn augment(x: &Matrix, spec: &AugmentSpec, rng: &mut Rng) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        if spec.scale_jitter > 0.0 {
            let s = 1.0 + rng.uniform_range(-spec.scale_jitter, spec.scale_jitter);
            row.iter_mut().for_each(|v| *v *= s);
        }
        if spec.mask_prob > 0.0 {
            for v in row.iter_mut() {
                if rng.bernoulli(spec.mask_prob) {
                    *v = 0.0;
                }
            }
        }
        if spec.noise_sigma > 0.0 {
            for v in row.iter_mut() {
                *v += spec.noise_sigma * rng.normal();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
