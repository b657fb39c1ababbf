//! Output heads, encoders, hand-derived gradients and the SGD training loop.

mod checkpoint;
mod encoder;
mod grads;
mod head;
mod train;

pub use checkpoint::{decode_model, encode_model, read_model, write_model, GSDM_MAGIC, GSDM_VERSION};
pub use encoder::{Dense, Encoder, EncoderKind};
pub use grads::{loss_and_grads, Gradients, NORM_EPS};
pub use head::{forward_ablation, forward_gsd, forward_vanilla, AblationVariant, GeometricHead, GsdForward, NormMode};
pub use train::{
    track_training_statistics, train, train_monitored, EpochRecord, History, Monitor, MonitorRecord, Schedule,
    StatisticsRow, TrainConfig, TrainingTable,
};

use crate::data::EmbeddingBatch;
use crate::error::{GsdError, Result};
use crate::geometry::cosine_from_parts;
use crate::linalg::{argmax, dot, norm, softmax, Matrix};
use crate::rng::GsdRng;

const INIT_STREAM: u64 = 0x1a17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// `logits = W dx`; alpha and beta are ignored.
    Vanilla,
    /// `logits_j = |w_j| N(|dx|) cos(dphi_j)`.
    Gsd,
}

impl HeadKind {
    pub fn tag(self) -> u32 {
        match self {
            HeadKind::Vanilla => 0,
            HeadKind::Gsd => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(HeadKind::Vanilla),
            1 => Some(HeadKind::Gsd),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Vanilla => "vanilla",
            HeadKind::Gsd => "gsd",
        }
    }
}

/// How logits are produced at inference time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inference {
    /// The head as trained.
    Plain,
    /// Trained logits divided by `T`.
    Temperature(f64),
    /// Disentangled head with an explicit effective-norm map.
    Norm(NormMode),
}

/// Encoder plus head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub head: GeometricHead,
    pub head_kind: HeadKind,
}

/// Network shape used by [`Model::init`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub encoder: EncoderKind,
    pub input_dim: usize,
    /// Hidden width; only used by `mlp1`.
    pub hidden_dim: usize,
    /// Output width of the encoder; forced to `input_dim` for `identity`.
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl Model {
    pub fn new(encoder: Encoder, head: GeometricHead, head_kind: HeadKind) -> Result<Self> {
        head.validate()?;
        if encoder.output_dim() != head.feature_dim() {
            return Err(GsdError::InvalidInput(format!(
                "encoder outputs {} features, head expects {}",
                encoder.output_dim(),
                head.feature_dim()
            )));
        }
        Ok(Self {
            encoder,
            head,
            head_kind,
        })
    }

    /// Seeded initialization; both head kinds draw identical parameters for the same seed.
    pub fn init(arch: Architecture, head_kind: HeadKind, seed: u64) -> Result<Self> {
        if arch.input_dim == 0 || arch.num_classes == 0 {
            return Err(GsdError::InvalidInput("input_dim and num_classes must be positive".into()));
        }
        let mut rng = GsdRng::derive(seed, INIT_STREAM);
        let encoder = match arch.encoder {
            EncoderKind::Identity => Encoder::identity(arch.input_dim),
            EncoderKind::Linear => Encoder::linear(arch.input_dim, arch.feature_dim, &mut rng),
            EncoderKind::Mlp1 => Encoder::mlp1(arch.input_dim, arch.hidden_dim, arch.feature_dim, &mut rng),
        };
        let head = GeometricHead::init(arch.num_classes, encoder.output_dim(), &mut rng);
        Self::new(encoder, head, head_kind)
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// `dx` for one input.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        self.encoder.forward(x)
    }

    pub fn logits(&self, x: &[f64], inference: Inference) -> Result<SampleOutput> {
        if x.len() != self.input_dim() {
            return Err(GsdError::InvalidInput(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let z = self.embed(x);
        match (self.head_kind, inference) {
            (HeadKind::Vanilla, Inference::Plain) => {
                let logits = forward_vanilla(&self.head.weights, &z)?;
                Ok(SampleOutput::new(logits, norm(&z), norm(&z)))
            }
            (HeadKind::Vanilla, Inference::Temperature(t)) => {
                check_temperature(t)?;
                let logits = forward_vanilla(&self.head.weights, &z)?.iter().map(|l| l / t).collect();
                Ok(SampleOutput::new(logits, norm(&z), norm(&z) / t))
            }
            (HeadKind::Vanilla, Inference::Norm(_)) => Err(GsdError::InvalidInput(
                "effective-norm modes need a disentangled head".into(),
            )),
            (HeadKind::Gsd, Inference::Plain) => Ok(self.gsd(&z, NormMode::Affine)?),
            (HeadKind::Gsd, Inference::Norm(mode)) => Ok(self.gsd(&z, mode)?),
            (HeadKind::Gsd, Inference::Temperature(t)) => {
                check_temperature(t)?;
                let mut out = self.gsd(&z, NormMode::Affine)?;
                out.logits.iter_mut().for_each(|l| *l /= t);
                out.effective_norm /= t;
                Ok(out)
            }
        }
    }

    fn gsd(&self, z: &[f64], mode: NormMode) -> Result<SampleOutput> {
        let f = forward_gsd(&self.head, z, mode)?;
        Ok(SampleOutput::new(f.logits, f.delta_norm, f.effective_norm))
    }

    /// Forward pass over a whole batch.
    pub fn predict(&self, batch: &EmbeddingBatch, inference: Inference) -> Result<Predictions> {
        if batch.is_empty() {
            return Err(GsdError::Empty("batch"));
        }
        if batch.num_classes() != self.num_classes() {
            return Err(GsdError::InvalidInput(format!(
                "batch has {} classes, model has {}",
                batch.num_classes(),
                self.num_classes()
            )));
        }
        let k = self.num_classes();
        let mut logits = Matrix::zeros(batch.len(), k);
        let mut probs = Matrix::zeros(batch.len(), k);
        let mut predicted = Vec::with_capacity(batch.len());
        let mut delta_norms = Vec::with_capacity(batch.len());
        let mut effective_norms = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let out = self.logits(&batch.row_f64(i), inference)?;
            predicted.push(argmax(&out.logits));
            probs.row_mut(i).copy_from_slice(&softmax(&out.logits));
            logits.row_mut(i).copy_from_slice(&out.logits);
            delta_norms.push(out.delta_norm);
            effective_norms.push(out.effective_norm);
        }
        Ok(Predictions {
            logits,
            probs,
            predicted,
            delta_norms,
            effective_norms,
        })
    }

    /// Mean `|dx|` and mean `cos(dphi_y)` against the true class. A zero
    /// embedding contributes cosine 0.
    pub fn embedding_statistics(&self, batch: &EmbeddingBatch) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(GsdError::Empty("batch"));
        }
        let mut norm_sum = 0.0;
        let mut cos_sum = 0.0;
        for i in 0..batch.len() {
            let z = self.embed(&batch.row_f64(i));
            let w = self.head.weights.row(batch.label(i));
            let (zn, wn) = (norm(&z), norm(w));
            norm_sum += zn;
            if zn > 0.0 && wn > 0.0 {
                cos_sum += cosine_from_parts(dot(w, &z), wn, zn);
            }
        }
        let n = batch.len() as f64;
        Ok((norm_sum / n, cos_sum / n))
    }

    /// Parameters in checkpoint order: encoder layers (weight, bias), head
    /// weights, then alpha and beta.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in self.encoder.layers() {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out.extend_from_slice(self.head.weights.as_slice());
        out.push(self.head.alpha);
        out.push(self.head.beta);
        out
    }

    /// Inverse of [`Model::flat_params`]; no validation of the new values.
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.flat_params().len() {
            return Err(GsdError::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.flat_params().len(),
                params.len()
            )));
        }
        let mut rest = params;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for layer in self.encoder.layers_mut() {
            take(layer.weight.as_mut_slice());
            take(&mut layer.bias);
        }
        take(self.head.weights.as_mut_slice());
        self.head.alpha = rest[0];
        self.head.beta = rest[1];
        Ok(())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(GsdError::InvalidParameter(format!("temperature must be positive, got {t}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub logits: Vec<f64>,
    pub delta_norm: f64,
    pub effective_norm: f64,
}

impl SampleOutput {
    fn new(logits: Vec<f64>, delta_norm: f64, effective_norm: f64) -> Self {
        Self {
            logits,
            delta_norm,
            effective_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub logits: Matrix,
    pub probs: Matrix,
    pub predicted: Vec<usize>,
    pub delta_norms: Vec<f64>,
    pub effective_norms: Vec<f64>,
}

impl Predictions {
    /// Samples whose effective norm is not strictly positive.
    pub fn nonpositive_norms(&self) -> usize {
        self.effective_norms.iter().filter(|&&n| n <= 0.0).count()
    }
}
