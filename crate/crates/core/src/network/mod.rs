//! Differentiable MLP encoder, projector and optional predictor, the momentum
//! (EMA) copy, and SGD with a warmup plus floored-cosine schedule.
//!
//! The online network maps `X → H` (encoder) `→ Z` (projector, then predictor if
//! present, then row L2 normalization). The momentum network mirrors the
//! encoder and projector only. No batch normalization is used anywhere.

mod mlp;
mod optim;

pub use mlp::{Linear, Mlp, MlpSpec, MlpTape};
pub use optim::{sgd_step, OptimizerConfig, OptimizerState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{l2_normalize_rows_backward, l2_normalize_rows_with_norms, Matrix, Rng};

/// Widths of the three MLPs. The predictor is only built when `use_predictor` is set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder: Vec<usize>,
    pub projector: Vec<usize>,
    pub predictor: Vec<usize>,
}

impl Architecture {
    /// Desk-scale defaults: encoder `d_in→128→64`, projector `64→64→32`, predictor `32→64→32`.
    pub fn desk(input_dim: usize) -> Self {
        Self { encoder: vec![input_dim, 128, 64], projector: vec![64, 64, 32], predictor: vec![32, 64, 32] }
    }

    pub fn validate(&self, use_predictor: bool) -> Result<()> {
        let enc = MlpSpec { layer_dims: self.encoder.clone() };
        let proj = MlpSpec { layer_dims: self.projector.clone() };
        enc.validate()?;
        proj.validate()?;
        if enc.output_dim() != proj.input_dim() {
            return Err(Error::DegenerateSpec(format!(
                "encoder output {} does not feed projector input {}",
                enc.output_dim(),
                proj.input_dim()
            )));
        }
        if use_predictor {
            let pred = MlpSpec { layer_dims: self.predictor.clone() };
            pred.validate()?;
            if pred.input_dim() != proj.output_dim() {
                return Err(Error::DegenerateSpec(format!(
                    "projector output {} does not feed predictor input {}",
                    proj.output_dim(),
                    pred.input_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Whether a tensor is a weight matrix or a bias (weight decay applies to weights only).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
}

/// One parameter set θ. Also used to carry gradients of the same shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub encoder: Mlp,
    pub projector: Mlp,
    pub predictor: Option<Mlp>,
    /// Bumped on every optimizer step; tapes from older generations are rejected.
    #[serde(default)]
    pub generation: u64,
}

pub type ParameterGradients = NetworkParams;

impl NetworkParams {
    pub fn new(arch: &Architecture, use_predictor: bool, rng: &mut Rng) -> Result<Self> {
        arch.validate(use_predictor)?;
        let encoder = Mlp::new(&MlpSpec { layer_dims: arch.encoder.clone() }, rng)?;
        let projector = Mlp::new(&MlpSpec { layer_dims: arch.projector.clone() }, rng)?;
        let predictor = if use_predictor {
            Some(Mlp::new(&MlpSpec { layer_dims: arch.predictor.clone() }, rng)?)
        } else {
            None
        };
        Ok(Self { encoder, projector, predictor, generation: 0 })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            projector: self.projector.zeros_like(),
            predictor: self.predictor.as_ref().map(Mlp::zeros_like),
            generation: 0,
        }
    }

    fn mlps(&self) -> impl Iterator<Item = &Mlp> {
        [Some(&self.encoder), Some(&self.projector), self.predictor.as_ref()].into_iter().flatten()
    }

    fn mlps_mut(&mut self) -> impl Iterator<Item = &mut Mlp> {
        [Some(&mut self.encoder), Some(&mut self.projector), self.predictor.as_mut()].into_iter().flatten()
    }

    /// All tensors in declaration order: encoder, projector, predictor; per layer weight then bias.
    pub fn tensors(&self) -> Vec<(TensorKind, &[f64])> {
        let mut out = Vec::new();
        for mlp in self.mlps() {
            for layer in &mlp.layers {
                out.push((TensorKind::Weight, layer.weight.data()));
                out.push((TensorKind::Bias, layer.bias.as_slice()));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorKind, &mut [f64])> {
        let mut out = Vec::new();
        for mlp in self.mlps_mut() {
            for layer in mlp.layers.iter_mut() {
                out.push((TensorKind::Weight, layer.weight.data_mut()));
                out.push((TensorKind::Bias, layer.bias.as_mut_slice()));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Every parameter flattened in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten) for a network of the same shape.
    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch(format!("expected {} parameters, got {}", self.parameter_count(), values.len())));
        }
        let mut offset = 0;
        for (_, t) in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// Accumulates `other` into `self` (gradient summation).
    pub fn accumulate(&mut self, other: &NetworkParams) -> Result<()> {
        let src = other.tensors();
        let mut dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::ShapeMismatch("gradient sets differ in structure".into()));
        }
        for ((_, d), (_, s)) in dst.iter_mut().zip(&src) {
            if d.len() != s.len() {
                return Err(Error::ShapeMismatch("gradient tensors differ in size".into()));
            }
            for (a, b) in d.iter_mut().zip(s.iter()) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Encoder and projector only, as mirrored by the momentum network.
    pub fn without_predictor(&self) -> Self {
        Self { encoder: self.encoder.clone(), projector: self.projector.clone(), predictor: None, generation: self.generation }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            encoder: self.encoder.spec().layer_dims,
            projector: self.projector.spec().layer_dims,
            predictor: self.predictor.as_ref().map(|p| p.spec().layer_dims).unwrap_or_default(),
        }
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    generation: u64,
    encoder: MlpTape,
    projector: MlpTape,
    predictor: Option<MlpTape>,
    z: Matrix,
    z_norms: Vec<f64>,
}

impl Tape {
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut p = self.encoder.activation_pattern();
        p.extend(self.projector.activation_pattern());
        if let Some(t) = &self.predictor {
            p.extend(t.activation_pattern());
        }
        p
    }
}

#[derive(Clone, Debug)]
pub struct Forward {
    /// Encoding (encoder output).
    pub h: Matrix,
    /// Row-normalized embedding.
    pub z: Matrix,
    pub tape: Option<Tape>,
}

pub fn forward(params: &NetworkParams, x: &Matrix, want_grad: bool) -> Result<Forward> {
    let (h, enc_tape) = params.encoder.forward(x, want_grad)?;
    let (mut out, proj_tape) = params.projector.forward(&h, want_grad)?;
    let mut pred_tape = None;
    if let Some(pred) = &params.predictor {
        let (o, t) = pred.forward(&out, want_grad)?;
        out = o;
        pred_tape = t;
    }
    let (z, z_norms) = l2_normalize_rows_with_norms(&out)?;
    let tape = match (enc_tape, proj_tape) {
        (Some(encoder), Some(projector)) => Some(Tape {
            generation: params.generation,
            encoder,
            projector,
            predictor: pred_tape,
            z: z.clone(),
            z_norms,
        }),
        _ => None,
    };
    Ok(Forward { h, z, tape })
}

/// Encoder only; used for diagnostics and for the no-grad assignment branch.
pub fn encode(params: &NetworkParams, x: &Matrix) -> Result<Matrix> {
    Ok(params.encoder.forward(x, false)?.0)
}

/// Reverse accumulation from `∂L/∂Z` (gradient w.r.t. the normalized embedding).
pub fn backward(params: &NetworkParams, tape: Option<&Tape>, grad_wrt_z: &Matrix) -> Result<ParameterGradients> {
    let tape = tape.ok_or(Error::StaleTape)?;
    if tape.generation != params.generation || tape.predictor.is_some() != params.predictor.is_some() {
        return Err(Error::StaleTape);
    }
    if grad_wrt_z.shape() != tape.z.shape() {
        return Err(Error::ShapeMismatch(format!(
            "gradient is {}x{}, embedding is {}x{}",
            grad_wrt_z.rows(),
            grad_wrt_z.cols(),
            tape.z.rows(),
            tape.z.cols()
        )));
    }
    let mut g = l2_normalize_rows_backward(&tape.z, &tape.z_norms, grad_wrt_z);
    let predictor = match (&params.predictor, &tape.predictor) {
        (Some(p), Some(t)) => {
            let (grads, gin) = p.backward(t, &g)?;
            g = gin;
            Some(grads)
        }
        _ => None,
    };
    let (projector, g) = params.projector.backward(&tape.projector, &g)?;
    let (encoder, _) = params.encoder.backward(&tape.encoder, &g)?;
    Ok(NetworkParams { encoder, projector, predictor, generation: params.generation })
}

/// Online network θ and its momentum copy θ′ (encoder and projector only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkPair {
    pub online: NetworkParams,
    pub momentum: NetworkParams,
    pub momentum_coeff: f64,
}

impl NetworkPair {
    pub fn new(arch: &Architecture, use_predictor: bool, momentum_coeff: f64, rng: &mut Rng) -> Result<Self> {
        let online = NetworkParams::new(arch, use_predictor, rng)?;
        let momentum = online.without_predictor();
        Ok(Self { online, momentum, momentum_coeff })
    }
}

/// `θ′ ← m θ′ + (1 − m) θ` over the encoder and projector.
pub fn ema_update(pair: &mut NetworkPair) -> Result<()> {
    let m = pair.momentum_coeff;
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::CoefficientOutOfRange(m));
    }
    let mirror = |online: &Mlp, momentum: &mut Mlp| -> Result<()> {
        if online.layers.len() != momentum.layers.len() {
            return Err(Error::ShapeMismatch("momentum network does not mirror the online network".into()));
        }
        for (o, t) in online.layers.iter().zip(momentum.layers.iter_mut()) {
            if o.weight.shape() != t.weight.shape() {
                return Err(Error::ShapeMismatch("momentum layer shape differs".into()));
            }
            for (tv, ov) in t.weight.data_mut().iter_mut().zip(o.weight.data()) {
                *tv = m * *tv + (1.0 - m) * ov;
            }
            for (tv, ov) in t.bias.iter_mut().zip(&o.bias) {
                *tv = m * *tv + (1.0 - m) * ov;
            }
        }
        Ok(())
    };
    mirror(&pair.online.encoder, &mut pair.momentum.encoder)?;
    mirror(&pair.online.projector, &mut pair.momentum.projector)?;
    Ok(())
}
