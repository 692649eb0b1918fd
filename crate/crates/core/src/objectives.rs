//! Self-assignment cross-entropy and the two baselines it is compared with.
//!
//! All three losses act on the similarity `s_ij = z_i · z'_j` between unit
//! embeddings of two views and report the gradient with respect to that
//! similarity alongside the gradients with respect to the raw inputs. Inputs are
//! row-normalized internally; for already-normalized rows that is the identity,
//! and the reported input gradients include the normalization Jacobian so they
//! can be checked against finite differences directly.
//!
//! Every value is already divided by `2m` (two directions, `m` anchors each).

use serde::{Deserialize, Serialize};

use crate::assignment::{sinkhorn_rectangular, AssignmentMatrix, SinkhornConfig};
use crate::error::{Error, Result};
use crate::numerics::{l2_normalize_rows, l2_normalize_rows_backward, l2_normalize_rows_with_norms, softmax_in_place, Matrix, Rng};

/// Rows of a target assignment must sum to one within this tolerance.
pub const ROW_STOCHASTIC_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossVariant {
    ReSA,
    InfoNCE,
    SwAV,
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            LossVariant::ReSA => "ReSA",
            LossVariant::InfoNCE => "InfoNCE",
            LossVariant::SwAV => "SwAV",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub variant: LossVariant,
}

impl LossConfig {
    pub fn resa() -> Self {
        Self { tau: 0.4, variant: LossVariant::ReSA }
    }

    pub fn infonce() -> Self {
        Self { tau: 0.1, variant: LossVariant::InfoNCE }
    }

    pub fn swav() -> Self {
        Self { tau: 0.1, variant: LossVariant::SwAV }
    }

    pub fn for_variant(variant: LossVariant) -> Self {
        match variant {
            LossVariant::ReSA => Self::resa(),
            LossVariant::InfoNCE => Self::infonce(),
            LossVariant::SwAV => Self::swav(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::NonPositiveTau(self.tau));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::resa()
    }
}

#[derive(Clone, Debug)]
pub struct LossResult {
    pub value: f64,
    /// The two directional terms, each divided by `m`; `value` is their mean.
    pub direction_values: [f64; 2],
    pub grad_wrt_z: Matrix,
    pub grad_wrt_zprime: Matrix,
    /// `∂ℓ(z_i)/∂s_ij` of the first direction, before the `1/2m` factor.
    pub grad_wrt_similarity: Matrix,
    /// Softmax rows `P_ij` of the first direction.
    pub probabilities: Matrix,
    /// Only set by the swapped-prediction loss.
    pub grad_wrt_prototypes: Option<Matrix>,
}

/// Learnable prototypes for the swapped-prediction baseline, one per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub prototypes: Matrix,
}

impl PrototypeBank {
    pub fn random(k: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let raw = Matrix::from_fn(k, dim, |_, _| rng.normal());
        Ok(Self { prototypes: l2_normalize_rows(&raw)? })
    }

    pub fn from_matrix(prototypes: Matrix) -> Self {
        Self { prototypes }
    }

    pub fn k(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn renormalize(&mut self) -> Result<()> {
        self.prototypes = l2_normalize_rows(&self.prototypes)?;
        Ok(())
    }
}

/// Normalized views and their cross similarity.
struct Views {
    z: Matrix,
    z_norms: Vec<f64>,
    zp: Matrix,
    zp_norms: Vec<f64>,
}

impl Views {
    fn new(z: &Matrix, zp: &Matrix) -> Result<Self> {
        if z.shape() != zp.shape() {
            return Err(Error::ShapeMismatch(format!(
                "views are {}x{} and {}x{}",
                z.rows(),
                z.cols(),
                zp.rows(),
                zp.cols()
            )));
        }
        if z.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        let (z, z_norms) = l2_normalize_rows_with_norms(z)?;
        let (zp, zp_norms) = l2_normalize_rows_with_norms(zp)?;
        Ok(Self { z, z_norms, zp, zp_norms })
    }

    /// Gradients w.r.t. the raw inputs from `∂L/∂s` where `s = ẑ ẑ'ᵀ`.
    fn backprop(&self, grad_s: &Matrix) -> Result<(Matrix, Matrix)> {
        let gz = grad_s.matmul(&self.zp)?;
        let gzp = grad_s.matmul_tn(&self.z)?;
        Ok((
            l2_normalize_rows_backward(&self.z, &self.z_norms, &gz),
            l2_normalize_rows_backward(&self.zp, &self.zp_norms, &gzp),
        ))
    }
}

/// Row softmax of `logits / tau` plus the per-row log-normalizers.
fn softmax_with_lse(logits: &Matrix, tau: f64) -> (Matrix, Vec<f64>) {
    let mut p = logits.clone();
    let lse = (0..p.rows()).map(|i| softmax_in_place(p.row_mut(i), tau)).collect();
    (p, lse)
}

/// `Σ_ij T_ij · log softmax(L/τ)_ij` with the log taken analytically.
fn weighted_log_likelihood(target: &Matrix, logits: &Matrix, lse: &[f64], tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..target.rows() {
        for (t, l) in target.row(i).iter().zip(logits.row(i)) {
            if *t != 0.0 {
                total += t * (l / tau - lse[i]);
            }
        }
    }
    total
}

/// Exact cross-entropy gradient w.r.t. logits: `(r_i P_ij − T_ij) / τ` with `r_i = Σ_j T_ij`.
/// For row-stochastic targets this is `(P − T)/τ`.
fn cross_entropy_logit_grad(p: &Matrix, target: &Matrix, tau: f64) -> Matrix {
    let mut g = Matrix::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let r: f64 = target.row(i).iter().sum();
        for ((gij, pij), tij) in g.row_mut(i).iter_mut().zip(p.row(i)).zip(target.row(i)) {
            *gij = (r * pij - tij) / tau;
        }
    }
    g
}

fn check_row_stochastic(a: &Matrix) -> Result<()> {
    for (row, sum) in a.row_sums().into_iter().enumerate() {
        if !((sum - 1.0).abs() <= ROW_STOCHASTIC_TOL) {
            return Err(Error::RowsNotStochastic { row, sum });
        }
    }
    Ok(())
}

/// Symmetric cross-entropy between the assignment `A` and the softmax of the
/// cross-view similarities: `A` targets `D(Z Z'ᵀ)` and `Aᵀ` targets `D(Z' Zᵀ)`.
pub fn resa_loss(z: &Matrix, zp: &Matrix, a: &AssignmentMatrix, cfg: &LossConfig) -> Result<LossResult> {
    cfg.validate()?;
    let views = Views::new(z, zp)?;
    let m = views.z.rows();
    let a = &a.values;
    if a.shape() != (m, m) {
        return Err(Error::ShapeMismatch(format!("assignment is {}x{}, batch has {m} samples", a.rows(), a.cols())));
    }
    check_row_stochastic(a)?;
    let tau = cfg.tau;

    let s = views.z.matmul_nt(&views.zp)?;
    let st = s.transpose();
    let at = a.transpose();
    let (p, lse) = softmax_with_lse(&s, tau);
    let (p_rev, lse_rev) = softmax_with_lse(&st, tau);

    let forward = -weighted_log_likelihood(a, &s, &lse, tau) / m as f64;
    let backward = -weighted_log_likelihood(&at, &st, &lse_rev, tau) / m as f64;

    let g_fwd = cross_entropy_logit_grad(&p, a, tau);
    let g_rev = cross_entropy_logit_grad(&p_rev, &at, tau);
    let grad_s = g_fwd.add(&g_rev.transpose())?.scale(0.5 / m as f64);
    let (grad_wrt_z, grad_wrt_zprime) = views.backprop(&grad_s)?;

    Ok(LossResult {
        value: 0.5 * (forward + backward),
        direction_values: [forward, backward],
        grad_wrt_z,
        grad_wrt_zprime,
        grad_wrt_similarity: g_fwd,
        probabilities: p,
        grad_wrt_prototypes: None,
    })
}

/// Symmetric InfoNCE with the matching view as the only positive.
///
/// Gradients follow the positive/negative split: `∂ℓ/∂s_ii = −(1/τ) Σ_{k≠i} P_ik`
/// and `∂ℓ/∂s_ij = P_ij / τ` for `j ≠ i`.
pub fn infonce_loss(z: &Matrix, zp: &Matrix, cfg: &LossConfig) -> Result<LossResult> {
    cfg.validate()?;
    let views = Views::new(z, zp)?;
    let m = views.z.rows();
    let tau = cfg.tau;

    let s = views.z.matmul_nt(&views.zp)?;
    let st = s.transpose();
    let (p, lse) = softmax_with_lse(&s, tau);
    let (p_rev, lse_rev) = softmax_with_lse(&st, tau);

    let mut forward = 0.0;
    let mut backward = 0.0;
    for i in 0..m {
        forward -= s.get(i, i) / tau - lse[i];
        backward -= st.get(i, i) / tau - lse_rev[i];
    }
    forward /= m as f64;
    backward /= m as f64;

    let positive_negative_grad = |p: &Matrix| {
        let mut g = p.scale(1.0 / tau);
        for i in 0..m {
            let negatives: f64 = p.row(i).iter().enumerate().filter(|&(k, _)| k != i).map(|(_, v)| v).sum();
            g.set(i, i, -negatives / tau);
        }
        g
    };
    let g_fwd = positive_negative_grad(&p);
    let g_rev = positive_negative_grad(&p_rev);
    let grad_s = g_fwd.add(&g_rev.transpose())?.scale(0.5 / m as f64);
    let (grad_wrt_z, grad_wrt_zprime) = views.backprop(&grad_s)?;

    Ok(LossResult {
        value: 0.5 * (forward + backward),
        direction_values: [forward, backward],
        grad_wrt_z,
        grad_wrt_zprime,
        grad_wrt_similarity: g_fwd,
        probabilities: p,
        grad_wrt_prototypes: None,
    })
}

/// Swapped prediction against learnable prototypes: the code of each view,
/// computed by rectangular Sinkhorn without gradient, is the target for the
/// prototype softmax of the other view. Plain form with no prototype freezing.
pub fn swav_loss(z: &Matrix, zp: &Matrix, bank: &PrototypeBank, cfg: &LossConfig, scfg: &SinkhornConfig) -> Result<LossResult> {
    if bank.k() < 2 {
        return Err(Error::TooFewPrototypes(bank.k()));
    }
    let c = &bank.prototypes;
    if c.cols() != z.cols() {
        return Err(Error::ShapeMismatch(format!("prototypes have dim {}, embeddings {}", c.cols(), z.cols())));
    }
    let zn = l2_normalize_rows(z)?;
    let zpn = l2_normalize_rows(zp)?;
    let q = sinkhorn_rectangular(&zn.matmul_nt(c)?, scfg)?;
    let qp = sinkhorn_rectangular(&zpn.matmul_nt(c)?, scfg)?;
    swav_loss_with_codes(z, zp, c, &q, &qp, cfg)
}

/// Swapped-prediction loss for fixed codes `q` (of `z`) and `qp` (of `zp`).
/// Exposed so the gradients can be checked with the codes held constant.
pub fn swav_loss_with_codes(
    z: &Matrix,
    zp: &Matrix,
    prototypes: &Matrix,
    q: &Matrix,
    qp: &Matrix,
    cfg: &LossConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    if prototypes.rows() < 2 {
        return Err(Error::TooFewPrototypes(prototypes.rows()));
    }
    let views = Views::new(z, zp)?;
    let m = views.z.rows();
    let k = prototypes.rows();
    if q.shape() != (m, k) || qp.shape() != (m, k) {
        return Err(Error::ShapeMismatch(format!("codes must be {m}x{k}")));
    }
    let tau = cfg.tau;

    let scores = views.z.matmul_nt(prototypes)?;
    let scores_p = views.zp.matmul_nt(prototypes)?;
    let (p, lse) = softmax_with_lse(&scores, tau);
    let (pp, lse_p) = softmax_with_lse(&scores_p, tau);

    let forward = -weighted_log_likelihood(qp, &scores, &lse, tau) / m as f64;
    let backward = -weighted_log_likelihood(q, &scores_p, &lse_p, tau) / m as f64;

    let g = cross_entropy_logit_grad(&p, qp, tau);
    let gp = cross_entropy_logit_grad(&pp, q, tau);
    let half = 0.5 / m as f64;
    let gz = g.matmul(prototypes)?.scale(half);
    let gzp = gp.matmul(prototypes)?.scale(half);
    let mut gc = g.matmul_tn(&views.z)?;
    gc.add_assign(&gp.matmul_tn(&views.zp)?)?;

    Ok(LossResult {
        value: 0.5 * (forward + backward),
        direction_values: [forward, backward],
        grad_wrt_z: l2_normalize_rows_backward(&views.z, &views.z_norms, &gz),
        grad_wrt_zprime: l2_normalize_rows_backward(&views.zp, &views.zp_norms, &gzp),
        grad_wrt_similarity: g,
        probabilities: p,
        grad_wrt_prototypes: Some(gc.scale(half)),
    })
}

/// Dispatches on `cfg.variant`. ReSA needs `assignment`, SwAV needs `bank`.
pub fn loss_for(
    z: &Matrix,
    zp: &Matrix,
    assignment: Option<&AssignmentMatrix>,
    bank: Option<&PrototypeBank>,
    cfg: &LossConfig,
    scfg: &SinkhornConfig,
) -> Result<LossResult> {
    match cfg.variant {
        LossVariant::ReSA => {
            let a = assignment.ok_or_else(|| Error::Config("ReSA loss needs an assignment".into()))?;
            resa_loss(z, zp, a, cfg)
        }
        LossVariant::InfoNCE => infonce_loss(z, zp, cfg),
        LossVariant::SwAV => {
            let bank = bank.ok_or_else(|| Error::Config("SwAV loss needs a prototype bank".into()))?;
            swav_loss(z, zp, bank, cfg, scfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::sinkhorn_self_assignment;
    use crate::numerics::cosine_self_similarity;

    fn unit(rng: &mut Rng, m: usize, d: usize) -> Matrix {
        l2_normalize_rows(&Matrix::from_fn(m, d, |_, _| rng.normal())).unwrap()
    }

    fn central_diff(x: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for idx in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            g.data_mut()[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn max_rel(a: &Matrix, b: &Matrix) -> f64 {
        let scale = a.max_abs().max(b.max_abs()).max(1e-12);
        a.max_abs_diff(b) / scale
    }

    #[test]
    fn two_orthogonal_pairs_by_hand() {
        let z = Matrix::identity(2);
        let cfg = LossConfig { tau: 1.0, variant: LossVariant::ReSA };
        let expected = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
        let r = resa_loss(&z, &z, &AssignmentMatrix::identity(2), &cfg).unwrap();
        assert!((r.value - expected).abs() < 1e-15);
        assert!((r.value - 0.313262).abs() < 1e-6);
        let n = infonce_loss(&z, &z, &cfg).unwrap();
        assert!((n.value - expected).abs() < 1e-15);
    }

    #[test]
    fn infonce_single_sample_is_zero() {
        let z = Matrix::from_rows(&[[0.3, -0.4]]).unwrap();
        assert_eq!(infonce_loss(&z, &z, &LossConfig::infonce()).unwrap().value, 0.0);
    }

    #[test]
    fn identity_assignment_reduces_to_infonce() {
        let mut rng = Rng::new(7);
        for &tau in &[0.1, 0.4, 1.0] {
            let z = unit(&mut rng, 6, 5);
            let zp = unit(&mut rng, 6, 5);
            let cfg = LossConfig { tau, variant: LossVariant::ReSA };
            let r = resa_loss(&z, &zp, &AssignmentMatrix::identity(6), &cfg).unwrap();
            let n = infonce_loss(&z, &zp, &cfg).unwrap();
            assert!((r.value - n.value).abs() <= 1e-12);
            assert!(r.grad_wrt_z.max_abs_diff(&n.grad_wrt_z) <= 1e-12);
        }
    }

    #[test]
    fn similarity_gradient_is_p_minus_a() {
        let mut rng = Rng::new(8);
        let (z, zp) = (unit(&mut rng, 8, 16), unit(&mut rng, 8, 16));
        let a = sinkhorn_self_assignment(&cosine_self_similarity(&unit(&mut rng, 8, 4)).unwrap(), &SinkhornConfig::default()).unwrap();
        let cfg = LossConfig::resa();
        let r = resa_loss(&z, &zp, &a, &cfg).unwrap();
        let expected = r.probabilities.sub(&a.values).unwrap().scale(1.0 / cfg.tau);
        assert!(r.grad_wrt_similarity.max_abs_diff(&expected) <= 1e-12);
        for s in r.probabilities.row_sums() {
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn resa_input_gradients_match_finite_differences() {
        let mut rng = Rng::new(9);
        let (z, zp) = (unit(&mut rng, 8, 16), unit(&mut rng, 8, 16));
        let a = sinkhorn_self_assignment(&cosine_self_similarity(&unit(&mut rng, 8, 3)).unwrap(), &SinkhornConfig::default()).unwrap();
        let cfg = LossConfig::resa();
        let r = resa_loss(&z, &zp, &a, &cfg).unwrap();
        let fd_z = central_diff(&z, 1e-5, |x| resa_loss(x, &zp, &a, &cfg).unwrap().value);
        let fd_zp = central_diff(&zp, 1e-5, |x| resa_loss(&z, x, &a, &cfg).unwrap().value);
        assert!(max_rel(&r.grad_wrt_z, &fd_z) <= 1e-6, "{}", max_rel(&r.grad_wrt_z, &fd_z));
        assert!(max_rel(&r.grad_wrt_zprime, &fd_zp) <= 1e-6);
    }

    #[test]
    fn infonce_gradient_rows_sum_to_zero() {
        let mut rng = Rng::new(10);
        let (z, zp) = (unit(&mut rng, 7, 4), unit(&mut rng, 7, 4));
        let r = infonce_loss(&z, &zp, &LossConfig::infonce()).unwrap();
        for s in r.grad_wrt_similarity.row_sums() {
            assert!(s.abs() <= 1e-12);
        }
    }

    #[test]
    fn swav_examples_and_gradients() {
        let mut rng = Rng::new(11);
        let single = PrototypeBank::random(1, 4, &mut rng).unwrap();
        let z = unit(&mut rng, 8, 4);
        assert!(matches!(
            swav_loss(&z, &z, &single, &LossConfig::swav(), &SinkhornConfig::default()),
            Err(Error::TooFewPrototypes(1))
        ));

        let bank = PrototypeBank::random(4, 4, &mut rng).unwrap();
        let same = swav_loss(&z, &z, &bank, &LossConfig::swav(), &SinkhornConfig::default()).unwrap();
        assert!((same.direction_values[0] - same.direction_values[1]).abs() < 1e-15);
        assert!((same.value - same.direction_values[0]).abs() < 1e-15);

        let zp = unit(&mut rng, 8, 4);
        let cfg = LossConfig::swav();
        let scfg = SinkhornConfig::default();
        let c = bank.prototypes.clone();
        let q = sinkhorn_rectangular(&z.matmul_nt(&c).unwrap(), &scfg).unwrap();
        let qp = sinkhorn_rectangular(&zp.matmul_nt(&c).unwrap(), &scfg).unwrap();
        let r = swav_loss_with_codes(&z, &zp, &c, &q, &qp, &cfg).unwrap();
        let fz = central_diff(&z, 1e-5, |x| swav_loss_with_codes(x, &zp, &c, &q, &qp, &cfg).unwrap().value);
        let fzp = central_diff(&zp, 1e-5, |x| swav_loss_with_codes(&z, x, &c, &q, &qp, &cfg).unwrap().value);
        let fc = central_diff(&c, 1e-5, |x| swav_loss_with_codes(&z, &zp, x, &q, &qp, &cfg).unwrap().value);
        assert!(max_rel(&r.grad_wrt_z, &fz) <= 1e-6);
        assert!(max_rel(&r.grad_wrt_zprime, &fzp) <= 1e-6);
        assert!(max_rel(r.grad_wrt_prototypes.as_ref().unwrap(), &fc) <= 1e-6);
    }

    #[test]
    fn shape_and_stochasticity_errors() {
        let z = Matrix::identity(3);
        let cfg = LossConfig::resa();
        assert!(matches!(resa_loss(&z, &Matrix::identity(2), &AssignmentMatrix::identity(3), &cfg), Err(Error::ShapeMismatch(_))));
        assert!(matches!(resa_loss(&z, &z, &AssignmentMatrix::identity(2), &cfg), Err(Error::ShapeMismatch(_))));
        let half = AssignmentMatrix::new(Matrix::identity(3).scale(0.5)).unwrap();
        assert!(matches!(resa_loss(&z, &z, &half, &cfg), Err(Error::RowsNotStochastic { row: 0, .. })));
        assert!(matches!(infonce_loss(&z, &z, &LossConfig { tau: 0.0, variant: LossVariant::InfoNCE }), Err(Error::NonPositiveTau(_))));
    }

    #[test]
    fn resa_is_nonnegative_and_gradients_bounded() {
        let mut rng = Rng::new(12);
        for _ in 0..20 {
            let (z, zp) = (unit(&mut rng, 12, 6), unit(&mut rng, 12, 6));
            let a = sinkhorn_self_assignment(&cosine_self_similarity(&z).unwrap(), &SinkhornConfig::default()).unwrap();
            let r = resa_loss(&z, &zp, &a, &LossConfig::resa()).unwrap();
            assert!(r.value >= 0.0 && r.value.is_finite());
            assert!(r.grad_wrt_similarity.max_abs() <= 12.0 / 0.4);
        }
    }
}
