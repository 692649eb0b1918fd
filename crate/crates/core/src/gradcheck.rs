//! Analytic-versus-reference gradient suites behind the `gradcheck` command.
//!
//! The similarity suites compare against closed forms built from an
//! independently computed softmax; the others compare against central finite
//! differences with `h = 1e-5`. Network coordinates whose perturbation flips a
//! ReLU are skipped, since the loss is not differentiable there.

use serde::Serialize;

use crate::assignment::{sinkhorn_rectangular, sinkhorn_self_assignment, AssignmentMatrix, SinkhornConfig};
use crate::error::Result;
use crate::network::{backward, forward, Architecture, NetworkParams};
use crate::numerics::{cosine_self_similarity, l2_normalize_rows, softmax_rows, Matrix, Rng};
use crate::objectives::{infonce_loss, resa_loss, swav_loss_with_codes, LossConfig, LossResult, LossVariant};

const FD_STEP: f64 = 1e-5;
/// Denominator floor of the per-entry relative error.
const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    /// Worst error over the suite; absolute for the closed-form suites, relative otherwise.
    pub worst_error: f64,
    pub tolerance: f64,
    pub instances: usize,
    /// Coordinates skipped because a perturbation crossed a ReLU kink.
    pub skipped: usize,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.worst_error <= self.tolerance
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Negate every analytic gradient before comparing; every suite should then fail.
    pub inject_sign_flip: bool,
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<Vec<SuiteReport>> {
    let rng = Rng::new(opts.seed);
    let sign = if opts.inject_sign_flip { -1.0 } else { 1.0 };
    Ok(vec![
        resa_similarity(&mut rng.derive(1), sign)?,
        infonce_similarity(&mut rng.derive(2), sign)?,
        resa_embeddings(&mut rng.derive(3), sign)?,
        swav_embeddings(&mut rng.derive(4), sign)?,
        network(&mut rng.derive(5), sign)?,
    ])
}

fn unit(rng: &mut Rng, m: usize, d: usize) -> Result<Matrix> {
    l2_normalize_rows(&Matrix::from_fn(m, d, |_, _| rng.normal()))
}

fn random_assignment(rng: &mut Rng, m: usize) -> Result<AssignmentMatrix> {
    let d = 2 + rng.below(6);
    sinkhorn_self_assignment(&cosine_self_similarity(&unit(rng, m, d)?)?, &SinkhornConfig::default())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn central_diff(x: &Matrix, f: impl Fn(&Matrix) -> Result<f64>) -> Result<Matrix> {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for idx in 0..x.data().len() {
        let mut xp = x.clone();
        xp.data_mut()[idx] += FD_STEP;
        let mut xm = x.clone();
        xm.data_mut()[idx] -= FD_STEP;
        g.data_mut()[idx] = (f(&xp)? - f(&xm)?) / (2.0 * FD_STEP);
    }
    Ok(g)
}

fn worst_rel(analytic: &Matrix, numeric: &Matrix, sign: f64) -> f64 {
    analytic.data().iter().zip(numeric.data()).map(|(a, n)| rel(sign * a, *n)).fold(0.0, f64::max)
}

/// ∂ℓ/∂s_ij = (P_ij − A_ij)/τ for the first direction.
fn resa_similarity(rng: &mut Rng, sign: f64) -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let instances = 50;
    for i in 0..instances {
        let m = 2 + rng.below(15);
        let d = 2 + rng.below(20);
        let (z, zp) = (unit(rng, m, d)?, unit(rng, m, d)?);
        let a = random_assignment(rng, m)?;
        let tau = [0.1, 0.4, 1.0][i % 3];
        let r = resa_loss(&z, &zp, &a, &LossConfig { tau, variant: LossVariant::ReSA })?;
        let p = softmax_rows(&z.matmul_nt(&zp)?, tau)?;
        let expected = p.sub(&a.values)?.scale(1.0 / tau);
        worst = worst.max(r.grad_wrt_similarity.scale(sign).max_abs_diff(&expected));
    }
    Ok(SuiteReport { name: "resa_similarity", worst_error: worst, tolerance: 1e-12, instances, skipped: 0 })
}

/// ∂ℓ/∂s_ii = −(1/τ) Σ_{k≠i} P_ik, ∂ℓ/∂s_ij = P_ij/τ.
fn infonce_similarity(rng: &mut Rng, sign: f64) -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let instances = 50;
    for i in 0..instances {
        let m = 2 + rng.below(15);
        let d = 2 + rng.below(20);
        let (z, zp) = (unit(rng, m, d)?, unit(rng, m, d)?);
        let tau = [0.1, 0.4, 1.0][i % 3];
        let r = infonce_loss(&z, &zp, &LossConfig { tau, variant: LossVariant::InfoNCE })?;
        let p = softmax_rows(&z.matmul_nt(&zp)?, tau)?;
        let expected = Matrix::from_fn(m, m, |a, b| {
            if a == b {
                -(0..m).filter(|&k| k != a).map(|k| p.get(a, k)).sum::<f64>() / tau
            } else {
                p.get(a, b) / tau
            }
        });
        worst = worst.max(r.grad_wrt_similarity.scale(sign).max_abs_diff(&expected));
    }
    Ok(SuiteReport { name: "infonce_similarity", worst_error: worst, tolerance: 1e-12, instances, skipped: 0 })
}

fn resa_embeddings(rng: &mut Rng, sign: f64) -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let instances = 10;
    for _ in 0..instances {
        let m = 2 + rng.below(9);
        let d = 2 + rng.below(15);
        // off the unit sphere so the normalization Jacobian is exercised
        let z = unit(rng, m, d)?.scale(1.0 + rng.uniform());
        let zp = unit(rng, m, d)?.scale(1.0 + rng.uniform());
        let a = random_assignment(rng, m)?;
        let cfg = LossConfig::resa();
        let r = resa_loss(&z, &zp, &a, &cfg)?;
        let fd_z = central_diff(&z, |x| Ok(resa_loss(x, &zp, &a, &cfg)?.value))?;
        let fd_zp = central_diff(&zp, |x| Ok(resa_loss(&z, x, &a, &cfg)?.value))?;
        worst = worst.max(worst_rel(&r.grad_wrt_z, &fd_z, sign)).max(worst_rel(&r.grad_wrt_zprime, &fd_zp, sign));
    }
    Ok(SuiteReport { name: "resa_embeddings", worst_error: worst, tolerance: 1e-6, instances, skipped: 0 })
}

fn swav_embeddings(rng: &mut Rng, sign: f64) -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let instances = 10;
    let scfg = SinkhornConfig::default();
    for _ in 0..instances {
        let m = 2 + rng.below(9);
        let d = 2 + rng.below(10);
        let k = 2 + rng.below(5);
        let (z, zp) = (unit(rng, m, d)?, unit(rng, m, d)?);
        let c = unit(rng, k, d)?;
        let q = sinkhorn_rectangular(&z.matmul_nt(&c)?, &scfg)?;
        let qp = sinkhorn_rectangular(&zp.matmul_nt(&c)?, &scfg)?;
        let cfg = LossConfig::swav();
        let r = swav_loss_with_codes(&z, &zp, &c, &q, &qp, &cfg)?;
        let fd_z = central_diff(&z, |x| Ok(swav_loss_with_codes(x, &zp, &c, &q, &qp, &cfg)?.value))?;
        let fd_zp = central_diff(&zp, |x| Ok(swav_loss_with_codes(&z, x, &c, &q, &qp, &cfg)?.value))?;
        let fd_c = central_diff(&c, |x| Ok(swav_loss_with_codes(&z, &zp, x, &q, &qp, &cfg)?.value))?;
        let gc = r.grad_wrt_prototypes.as_ref().expect("swav reports prototype gradients");
        worst = worst
            .max(worst_rel(&r.grad_wrt_z, &fd_z, sign))
            .max(worst_rel(&r.grad_wrt_zprime, &fd_zp, sign))
            .max(worst_rel(gc, &fd_c, sign));
    }
    Ok(SuiteReport { name: "swav_embeddings", worst_error: worst, tolerance: 1e-6, instances, skipped: 0 })
}

/// All network heads use the ReSA temperature. At τ = 0.1 the third derivative
/// of a tiny random net's loss is large enough that the `h²` truncation error of
/// the central difference alone approaches the tolerance.
const NETWORK_HEAD: LossConfig = LossConfig { tau: 0.4, variant: LossVariant::ReSA };

/// Loss head used for one network configuration.
enum Head {
    ReSA(AssignmentMatrix),
    InfoNCE,
    SwAV { prototypes: Matrix, q: Matrix, qp: Matrix },
}

impl Head {
    fn loss(&self, z1: &Matrix, z2: &Matrix) -> Result<LossResult> {
        match self {
            Head::ReSA(a) => resa_loss(z1, z2, a, &NETWORK_HEAD),
            Head::InfoNCE => infonce_loss(z1, z2, &LossConfig { variant: LossVariant::InfoNCE, ..NETWORK_HEAD }),
            Head::SwAV { prototypes, q, qp } => {
                swav_loss_with_codes(z1, z2, prototypes, q, qp, &LossConfig { variant: LossVariant::SwAV, ..NETWORK_HEAD })
            }
        }
    }
}

/// Full-network gradients over 20 random architectures and heads.
fn network(rng: &mut Rng, sign: f64) -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let instances = 20;
    for i in 0..instances {
        let d_in = 2 + rng.below(6);
        let enc_out = 3 + rng.below(5);
        let emb = 2 + rng.below(5);
        let use_predictor = i % 2 == 1;
        let arch = Architecture {
            encoder: vec![d_in, 3 + rng.below(6), enc_out],
            projector: vec![enc_out, 3 + rng.below(6), emb],
            predictor: vec![emb, 3 + rng.below(6), emb],
        };
        let m = 3 + rng.below(5);
        let x1 = Matrix::from_fn(m, d_in, |_, _| rng.normal());
        let x2 = Matrix::from_fn(m, d_in, |_, _| rng.normal());
        // narrow random ReLU nets can map a row to exactly zero; redraw until both views embed
        let mut params = NetworkParams::new(&arch, use_predictor, rng)?;
        while forward(&params, &x1, false).is_err() || forward(&params, &x2, false).is_err() {
            params = NetworkParams::new(&arch, use_predictor, rng)?;
        }
        let head = match i % 3 {
            0 => Head::ReSA(random_assignment(rng, m)?),
            1 => Head::InfoNCE,
            _ => {
                let k = 2 + rng.below(4);
                let prototypes = unit(rng, k, emb)?;
                let z1 = forward(&params, &x1, false)?.z;
                let z2 = forward(&params, &x2, false)?.z;
                let scfg = SinkhornConfig::default();
                let q = sinkhorn_rectangular(&z1.matmul_nt(&prototypes)?, &scfg)?;
                let qp = sinkhorn_rectangular(&z2.matmul_nt(&prototypes)?, &scfg)?;
                Head::SwAV { prototypes, q, qp }
            }
        };

        let f1 = forward(&params, &x1, true)?;
        let f2 = forward(&params, &x2, true)?;
        let r = head.loss(&f1.z, &f2.z)?;
        let mut g = backward(&params, f1.tape.as_ref(), &r.grad_wrt_z)?;
        g.accumulate(&backward(&params, f2.tape.as_ref(), &r.grad_wrt_zprime)?)?;
        let analytic = g.flatten();
        let pattern = |p: &NetworkParams| -> Result<(Vec<bool>, Vec<bool>)> {
            let a = forward(p, &x1, true)?.tape.map(|t| t.activation_pattern()).unwrap_or_default();
            let b = forward(p, &x2, true)?.tape.map(|t| t.activation_pattern()).unwrap_or_default();
            Ok((a, b))
        };
        let base_pattern = pattern(&params)?;
        let loss = |p: &NetworkParams| -> Result<f64> {
            Ok(head.loss(&forward(p, &x1, false)?.z, &forward(p, &x2, false)?.z)?.value)
        };

        let base = params.flatten();
        for idx in 0..base.len() {
            let mut v = base.clone();
            v[idx] += FD_STEP;
            params.load_flat(&v)?;
            let up = loss(&params)?;
            let kink_up = pattern(&params)? != base_pattern;
            v[idx] -= 2.0 * FD_STEP;
            params.load_flat(&v)?;
            let down = loss(&params)?;
            let kink_down = pattern(&params)? != base_pattern;
            if kink_up || kink_down {
                skipped += 1;
                continue;
            }
            worst = worst.max(rel(sign * analytic[idx], (up - down) / (2.0 * FD_STEP)));
        }
    }
    Ok(SuiteReport { name: "network", worst_error: worst, tolerance: 1e-5, instances, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for r in run_gradcheck(&GradcheckOptions { seed: 0, inject_sign_flip: false }).unwrap() {
            assert!(r.passed(), "{} worst {:e}", r.name, r.worst_error);
        }
    }

    #[test]
    fn sign_flip_fails_every_suite() {
        for r in run_gradcheck(&GradcheckOptions { seed: 0, inject_sign_flip: true }).unwrap() {
            assert!(!r.passed(), "{} survived the mutation", r.name);
        }
    }
}
