use super::encoder::Dense;
use super::{HeadKind, Model, TrainConfig};
use crate::data::EmbeddingBatch;
use crate::error::{GsdError, Result};
use crate::linalg::{axpy, dot, log_sum_exp, softmax, squared_norm, Matrix};

/// Added under the square root of `|dx|^2` on the gradient path.
pub const NORM_EPS: f64 = 1e-12;

/// Parameter-shaped gradients. `alpha` and `beta` are zero unless the
/// scalars are trainable (disentangled head with `train_scalars`).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<Dense>,
    pub weights: Matrix,
    pub alpha: f64,
    pub beta: f64,
}

impl Gradients {
    fn zeros(model: &Model) -> Self {
        Self {
            encoder: model.encoder.zero_grads(),
            weights: Matrix::zeros(model.head.weights.rows(), model.head.weights.cols()),
            alpha: 0.0,
            beta: 0.0,
        }
    }

    /// Same order as [`Model::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.encoder {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out.extend_from_slice(self.weights.as_slice());
        out.push(self.alpha);
        out.push(self.beta);
        out
    }
}

pub(crate) fn scalars_trainable(model: &Model, cfg: &TrainConfig) -> bool {
    model.head_kind == HeadKind::Gsd && cfg.train_scalars
}

/// Mean cross-entropy plus `lambda_alpha (alpha - 1)^2` plus
/// `(weight_decay / 2) |theta|^2`, and its exact gradient.
pub fn loss_and_grads(model: &Model, batch: &EmbeddingBatch, cfg: &TrainConfig) -> Result<(f64, Gradients)> {
    let indices: Vec<usize> = (0..batch.len()).collect();
    loss_and_grads_on(model, batch, &indices, cfg)
}

pub(crate) fn loss_and_grads_on(
    model: &Model,
    batch: &EmbeddingBatch,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, Gradients)> {
    if indices.is_empty() {
        return Err(GsdError::Empty("batch"));
    }
    if batch.dim() != model.input_dim() || batch.num_classes() != model.num_classes() {
        return Err(GsdError::InvalidInput(format!(
            "batch shape ({} features, {} classes) does not match model ({}, {})",
            batch.dim(),
            batch.num_classes(),
            model.input_dim(),
            model.num_classes()
        )));
    }
    let head = &model.head;
    let gsd = model.head_kind == HeadKind::Gsd;
    let scalars = scalars_trainable(model, cfg);
    let inv_b = 1.0 / indices.len() as f64;
    let mut grads = Gradients::zeros(model);
    let mut ce_sum = 0.0;

    for &i in indices {
        let x = batch.row_f64(i);
        let y = batch.label(i);
        let (z, trace) = model.encoder.forward_traced(&x);
        let d = head.weights.matvec(&z);

        // logits = s * d with s = (n + beta) / (alpha n); s = 1 for the plain head
        let (n, s) = if gsd {
            let n = (squared_norm(&z) + NORM_EPS).sqrt();
            (n, (n + head.beta) / (head.alpha * n))
        } else {
            (0.0, 1.0)
        };
        let logits: Vec<f64> = d.iter().map(|v| s * v).collect();
        ce_sum += log_sum_exp(&logits) - logits[y];

        let mut g = softmax(&logits);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= inv_b);

        grads.weights.add_outer(s, &g, &z);
        let mut grad_z = head.weights.matvec_t(&g);
        grad_z.iter_mut().for_each(|v| *v *= s);
        if gsd {
            let big_g = dot(&g, &d);
            if scalars {
                grads.alpha += -big_g * s / head.alpha;
                grads.beta += big_g / (head.alpha * n);
            }
            // ds/dn = -beta / (alpha n^2), dn/dz = z / n
            axpy(-big_g * head.beta / (head.alpha * n * n * n), &z, &mut grad_z);
        }
        model.encoder.backward(&x, &trace, &grad_z, &mut grads.encoder);
    }

    let mut loss = ce_sum * inv_b;
    if scalars {
        loss += cfg.lambda_alpha * (head.alpha - 1.0) * (head.alpha - 1.0);
        grads.alpha += 2.0 * cfg.lambda_alpha * (head.alpha - 1.0);
    }
    if cfg.weight_decay > 0.0 {
        let wd = cfg.weight_decay;
        let mut sq = 0.0;
        for (layer, g) in model.encoder.layers().iter().zip(grads.encoder.iter_mut()) {
            sq += layer.weight.squared_sum() + squared_norm(&layer.bias);
            axpy(wd, layer.weight.as_slice(), g.weight.as_mut_slice());
            axpy(wd, &layer.bias, &mut g.bias);
        }
        sq += head.weights.squared_sum();
        axpy(wd, head.weights.as_slice(), grads.weights.as_mut_slice());
        if scalars {
            sq += head.alpha * head.alpha + head.beta * head.beta;
            grads.alpha += wd * head.alpha;
            grads.beta += wd * head.beta;
        }
        loss += 0.5 * wd * sq;
    }
    Ok((loss, grads))
}
