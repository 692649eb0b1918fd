//! Dense-matrix primitives, deterministic RNG, and the normalization and
//! softmax kernels the rest of the crate composes.
//!
//! Layout convention: a batch is a matrix with one sample per **row**. Column
//! conventions (`H ∈ R^{d×m}`, `S = HᵀH`) translate to `S = H Hᵀ` here, and
//! every other formula is transposed the same way.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::{Rng, RngState};

use crate::error::{Error, Result};

/// Rows whose norm falls below this are treated as zero vectors.
pub const ZERO_NORM: f64 = 1e-30;

/// Tolerance on `|‖row‖ − 1|` accepted by kernels that require unit rows.
pub const NORMALIZED_TOL: f64 = 1e-9;

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    Ok(l2_normalize_rows_with_norms(m)?.0)
}

/// Like [`l2_normalize_rows`], also returning the original row norms (needed by the backward pass).
pub fn l2_normalize_rows_with_norms(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let norms = m.row_norms();
    let mut out = m.clone();
    for (i, &n) in norms.iter().enumerate() {
        if !(n >= ZERO_NORM) || !n.is_finite() {
            return Err(Error::ZeroRow(i));
        }
        out.row_mut(i).iter_mut().for_each(|x| *x /= n);
    }
    Ok((out, norms))
}

/// Backward pass of row normalization: given `y = x / ‖x‖` and `∂L/∂y`,
/// returns `∂L/∂x = (g − y (y·g)) / ‖x‖` row by row.
pub fn l2_normalize_rows_backward(normalized: &Matrix, norms: &[f64], grad: &Matrix) -> Matrix {
    let mut out = grad.clone();
    for i in 0..normalized.rows() {
        let y = normalized.row(i);
        let g = out.row_mut(i);
        let dot: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for (gj, yj) in g.iter_mut().zip(y) {
            *gj = (*gj - yj * dot) / norms[i];
        }
    }
    out
}

/// Fails with `NotNormalized(i)` for the first row whose norm is not 1 within `tol`.
pub fn check_unit_rows(m: &Matrix, tol: f64) -> Result<()> {
    for (i, n) in m.row_norms().into_iter().enumerate() {
        if !((n - 1.0).abs() <= tol) {
            return Err(Error::NotNormalized(i));
        }
    }
    Ok(())
}

/// Cosine self-similarity `S = H Hᵀ` of unit rows. The result is exactly symmetric.
pub fn cosine_self_similarity(h: &Matrix) -> Result<Matrix> {
    check_unit_rows(h, NORMALIZED_TOL)?;
    let mut s = h.matmul_nt(h)?;
    let m = s.rows();
    for i in 0..m {
        for j in (i + 1)..m {
            let v = s.get(i, j);
            s.set(j, i, v);
        }
    }
    Ok(s)
}

/// Row-wise softmax of `M / tau`, stabilized by subtracting each row's maximum.
pub fn softmax_rows(m: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::NonPositiveTau(tau));
    }
    let mut out = m.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i), tau);
    }
    Ok(out)
}

/// Softmax of `row / tau` in place; returns the log-normalizer `max + ln Σ exp(·)` in scaled units.
pub(crate) fn softmax_in_place(row: &mut [f64], tau: f64) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / tau));
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x / tau - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}
