//! Sinkhorn-Knopp self-assignment.
//!
//! [`sinkhorn_self_assignment`] turns the cosine self-similarity of a batch into a
//! (nearly) doubly stochastic soft assignment in which every sample acts as an
//! anchor for every other. The step sequence is fixed: initialize
//! `Q = exp(S/ε)ᵀ / Σ exp(S/ε)`, run `T` rounds of (rows to `1/m`, columns to
//! `1/m`), normalize columns of `Q` to one, and return `A = Qᵀ`. The last step
//! makes the rows of `A` sum to one exactly, while column sums of `A` only
//! approach one as `T` grows.
//!
//! Nothing here participates in differentiation; callers treat the result as a
//! constant target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    /// Entropic regularization ε.
    pub epsilon: f64,
    /// Number of row/column normalization rounds T.
    pub iterations: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, iterations: 3 }
    }
}

impl SinkhornConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::NonPositiveEpsilon(self.epsilon));
        }
        Ok(())
    }
}

/// Soft self-assignment `A_H` together with its marginal errors.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    pub values: Matrix,
    /// `max_i |Σ_j A_ij − 1|`
    pub row_marginal_error: f64,
    /// `max_j |Σ_i A_ij − 1|`
    pub col_marginal_error: f64,
}

impl AssignmentMatrix {
    /// Wraps an arbitrary square target matrix (e.g. the identity for InfoNCE).
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(Error::NonSquareInput { rows: values.rows(), cols: values.cols() });
        }
        let row_marginal_error = max_deviation(&values.row_sums(), 1.0);
        let col_marginal_error = max_deviation(&values.col_sums(), 1.0);
        Ok(Self { values, row_marginal_error, col_marginal_error })
    }

    pub fn identity(m: usize) -> Self {
        Self { values: Matrix::identity(m), row_marginal_error: 0.0, col_marginal_error: 0.0 }
    }

    pub fn size(&self) -> usize {
        self.values.rows()
    }

    /// Mean of the diagonal entries.
    pub fn diag_mass(&self) -> f64 {
        let d = self.values.diagonal();
        if d.is_empty() {
            return 0.0;
        }
        d.iter().sum::<f64>() / d.len() as f64
    }
}

fn max_deviation(values: &[f64], target: f64) -> f64 {
    values.iter().fold(0.0, |m, v| m.max((v - target).abs()))
}

/// `exp((x − max)/ε)` over the whole matrix followed by division by the grand total.
/// The global shift cancels in the normalization, so the result equals the
/// unshifted `exp(x/ε) / Σ exp(x/ε)` while never overflowing.
fn normalized_gibbs_kernel(scores: &Matrix, epsilon: f64) -> Matrix {
    let max = scores.data().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut q = scores.map(|x| ((x - max) / epsilon).exp());
    let total: f64 = q.data().iter().sum();
    q.data_mut().iter_mut().for_each(|x| *x /= total);
    q
}

fn scale_rows_to(q: &mut Matrix, target: f64) {
    for i in 0..q.rows() {
        let row = q.row_mut(i);
        let sum: f64 = row.iter().sum();
        let f = target / sum;
        row.iter_mut().for_each(|x| *x *= f);
    }
}

fn scale_cols_to(q: &mut Matrix, target: f64) {
    let sums = q.col_sums();
    let factors: Vec<f64> = sums.iter().map(|s| target / s).collect();
    for i in 0..q.rows() {
        for (x, f) in q.row_mut(i).iter_mut().zip(&factors) {
            *x *= f;
        }
    }
}

/// Sinkhorn-Knopp self-assignment of an `m×m` similarity matrix.
pub fn sinkhorn_self_assignment(s: &Matrix, cfg: &SinkhornConfig) -> Result<AssignmentMatrix> {
    if s.rows() != s.cols() {
        return Err(Error::NonSquareInput { rows: s.rows(), cols: s.cols() });
    }
    cfg.validate()?;
    let m = s.rows();
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    let c = 1.0 / m as f64;

    let mut q = normalized_gibbs_kernel(&s.transpose(), cfg.epsilon);
    for _ in 0..cfg.iterations {
        scale_rows_to(&mut q, c);
        scale_cols_to(&mut q, c);
    }
    scale_cols_to(&mut q, 1.0);

    AssignmentMatrix::new(q.transpose())
}

/// Rectangular Sinkhorn for an `m×K` score matrix (samples × prototypes), as used
/// by swapped-prediction baselines. Marginals are uniform: `1/m` per sample and
/// `1/K` per prototype. The returned `m×K` matrix has rows summing to one and
/// columns summing to approximately `m/K`.
pub fn sinkhorn_rectangular(scores: &Matrix, cfg: &SinkhornConfig) -> Result<Matrix> {
    cfg.validate()?;
    let (m, k) = scores.shape();
    if m == 0 || k == 0 {
        return Err(Error::EmptyInput);
    }
    // K×m, prototypes as rows
    let mut q = normalized_gibbs_kernel(&scores.transpose(), cfg.epsilon);
    for _ in 0..cfg.iterations {
        scale_rows_to(&mut q, 1.0 / k as f64);
        scale_cols_to(&mut q, 1.0 / m as f64);
    }
    scale_cols_to(&mut q, 1.0);
    Ok(q.transpose())
}
