use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Layer widths from input to output; ReLU between layers, identity after the last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        let spec = Self { layer_dims };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::DegenerateSpec(format!("MLP needs at least one layer, got dims {:?}", self.layer_dims)));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::DegenerateSpec(format!("MLP dims must be >= 1, got {:?}", self.layer_dims)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }
}

/// Affine map `y = x W + b`, with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn he(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        Self {
            weight: Matrix::from_fn(fan_in, fan_out, |_, _| std * rng.normal()),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self { weight: Matrix::zeros(self.weight.rows(), self.weight.cols()), bias: vec![0.0; self.bias.len()] }
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weight)?;
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Intermediates of one MLP forward pass.
#[derive(Clone, Debug)]
pub struct MlpTape {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Matrix>,
    /// Pre-activations of every layer except the last.
    hidden_pre: Vec<Matrix>,
}

impl MlpTape {
    /// Sign pattern of all hidden pre-activations; differs across a ReLU kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.hidden_pre.iter().flat_map(|m| m.data().iter().map(|&v| v > 0.0)).collect()
    }
}

impl Mlp {
    pub fn new(spec: &MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_dims.windows(2).map(|w| Linear::he(w[0], w[1], rng)).collect();
        Ok(Self { layers })
    }

    pub fn spec(&self) -> MlpSpec {
        let mut dims = vec![self.layers[0].weight.rows()];
        dims.extend(self.layers.iter().map(|l| l.weight.cols()));
        MlpSpec { layer_dims: dims }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(Linear::zeros_like).collect() }
    }

    pub fn forward(&self, x: &Matrix, record: bool) -> Result<(Matrix, Option<MlpTape>)> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!("MLP expects {} input features, got {}", self.input_dim(), x.cols())));
        }
        let mut inputs = Vec::new();
        let mut hidden_pre = Vec::new();
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&a)?;
            if record {
                inputs.push(a);
            }
            if l == last {
                a = pre;
            } else {
                let post = pre.map(|v| v.max(0.0));
                if record {
                    hidden_pre.push(pre);
                }
                a = post;
            }
        }
        Ok((a, record.then_some(MlpTape { inputs, hidden_pre })))
    }

    /// Returns parameter gradients and the gradient w.r.t. the MLP input.
    pub fn backward(&self, tape: &MlpTape, grad_out: &Matrix) -> Result<(Mlp, Matrix)> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::StaleTape);
        }
        let mut grads: Vec<Linear> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            if l + 1 < self.layers.len() {
                // through the ReLU that follows layer l
                let pre = &tape.hidden_pre[l];
                for (gv, &p) in g.data_mut().iter_mut().zip(pre.data()) {
                    if p <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let input = &tape.inputs[l];
            let weight = input.matmul_tn(&g)?;
            let bias = g.col_sums();
            let grad_in = g.matmul_nt(&self.layers[l].weight)?;
            grads.push(Linear { weight, bias });
            g = grad_in;
        }
        grads.reverse();
        Ok((Mlp { layers: grads }, g))
    }
}
