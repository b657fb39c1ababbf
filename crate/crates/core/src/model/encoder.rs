use crate::error::{GsdError, Result};
use crate::linalg::{axpy, Matrix};
use crate::rng::GsdRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Features are used as-is (pre-extracted embeddings).
    Identity,
    /// `z = A x + a`.
    Linear,
    /// `z = W2 relu(W1 x + b1) + b2`.
    Mlp1,
}

impl EncoderKind {
    pub fn tag(self) -> u32 {
        match self {
            EncoderKind::Identity => 0,
            EncoderKind::Linear => 1,
            EncoderKind::Mlp1 => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(EncoderKind::Identity),
            1 => Some(EncoderKind::Linear),
            2 => Some(EncoderKind::Mlp1),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Identity => "identity",
            EncoderKind::Linear => "linear",
            EncoderKind::Mlp1 => "mlp1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(EncoderKind::Identity),
            "linear" => Ok(EncoderKind::Linear),
            "mlp1" => Ok(EncoderKind::Mlp1),
            other => Err(GsdError::InvalidInput(format!("unknown encoder kind {other:?}"))),
        }
    }
}

/// Affine layer `y = W x + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `+-1/sqrt(fan_in)` for weights and biases.
    pub fn init(inputs: usize, outputs: usize, rng: &mut GsdRng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for w in layer.weight.as_mut_slice() {
            *w = rng.uniform_range(-bound, bound);
        }
        for b in &mut layer.bias {
            *b = rng.uniform_range(-bound, bound);
        }
        layer
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        axpy(1.0, &self.bias, &mut y);
        y
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// Feature extractor producing the instance-dependent embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    kind: EncoderKind,
    input_dim: usize,
    layers: Vec<Dense>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct EncoderTrace {
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl Encoder {
    pub fn identity(dim: usize) -> Self {
        Self {
            kind: EncoderKind::Identity,
            input_dim: dim,
            layers: Vec::new(),
        }
    }

    pub fn linear(input_dim: usize, output_dim: usize, rng: &mut GsdRng) -> Self {
        Self {
            kind: EncoderKind::Linear,
            input_dim,
            layers: vec![Dense::init(input_dim, output_dim, rng)],
        }
    }

    pub fn mlp1(input_dim: usize, hidden: usize, output_dim: usize, rng: &mut GsdRng) -> Self {
        Self {
            kind: EncoderKind::Mlp1,
            input_dim,
            layers: vec![
                Dense::init(input_dim, hidden, rng),
                Dense::init(hidden, output_dim, rng),
            ],
        }
    }

    /// Builds an encoder from explicit layers, checking the shapes line up.
    pub fn from_layers(kind: EncoderKind, input_dim: usize, layers: Vec<Dense>) -> Result<Self> {
        let expected = match kind {
            EncoderKind::Identity => 0,
            EncoderKind::Linear => 1,
            EncoderKind::Mlp1 => 2,
        };
        if layers.len() != expected {
            return Err(GsdError::InvalidInput(format!(
                "{} encoder needs {expected} layers, got {}",
                kind.name(),
                layers.len()
            )));
        }
        let mut width = input_dim;
        for layer in &layers {
            if layer.inputs() != width || layer.bias.len() != layer.outputs() {
                return Err(GsdError::InvalidInput("encoder layer shapes do not chain".into()));
            }
            width = layer.outputs();
        }
        Ok(Self {
            kind,
            input_dim,
            layers,
        })
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Dense::outputs)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_traced(x).0
    }

    pub(crate) fn forward_traced(&self, x: &[f64]) -> (Vec<f64>, EncoderTrace) {
        match self.kind {
            EncoderKind::Identity => (
                x.to_vec(),
                EncoderTrace {
                    pre_activation: Vec::new(),
                    hidden: Vec::new(),
                },
            ),
            EncoderKind::Linear => (
                self.layers[0].forward(x),
                EncoderTrace {
                    pre_activation: Vec::new(),
                    hidden: Vec::new(),
                },
            ),
            EncoderKind::Mlp1 => {
                let pre = self.layers[0].forward(x);
                let hidden: Vec<f64> = pre.iter().map(|&u| u.max(0.0)).collect();
                let z = self.layers[1].forward(&hidden);
                (
                    z,
                    EncoderTrace {
                        pre_activation: pre,
                        hidden,
                    },
                )
            }
        }
    }

    /// Accumulates parameter gradients given `d loss / d z` for one sample.
    pub(crate) fn backward(&self, x: &[f64], trace: &EncoderTrace, grad_z: &[f64], grads: &mut [Dense]) {
        match self.kind {
            EncoderKind::Identity => {}
            EncoderKind::Linear => {
                grads[0].weight.add_outer(1.0, grad_z, x);
                axpy(1.0, grad_z, &mut grads[0].bias);
            }
            EncoderKind::Mlp1 => {
                grads[1].weight.add_outer(1.0, grad_z, &trace.hidden);
                axpy(1.0, grad_z, &mut grads[1].bias);
                let mut grad_pre = self.layers[1].weight.matvec_t(grad_z);
                for (g, &u) in grad_pre.iter_mut().zip(&trace.pre_activation) {
                    if u <= 0.0 {
                        *g = 0.0;
                    }
                }
                grads[0].weight.add_outer(1.0, &grad_pre, x);
                axpy(1.0, &grad_pre, &mut grads[0].bias);
            }
        }
    }

    pub(crate) fn zero_grads(&self) -> Vec<Dense> {
        self.layers
            .iter()
            .map(|l| Dense::zeros(l.inputs(), l.outputs()))
            .collect()
    }
}
