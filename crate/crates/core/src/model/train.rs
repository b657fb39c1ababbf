use std::f64::consts::PI;
use std::fmt::Write as _;

use super::grads::{loss_and_grads_on, scalars_trainable, Gradients};
use super::{HeadKind, Inference, Model};
use crate::data::EmbeddingBatch;
use crate::error::{GsdError, Result};
use crate::linalg::axpy;
use crate::metrics::{accuracy, ece, BinningSpec};
use crate::rng::GsdRng;

const SHUFFLE_STREAM: u64 = 0x5f1e;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// `lr * (1 + cos(pi e / E)) / 2`.
    Cosine,
    /// `lr * 0.2^k` after the k-th of the milestones at 30%, 60% and 80% of the run.
    Step,
    Constant,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::Cosine => "cosine",
            Schedule::Step => "step",
            Schedule::Constant => "constant",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Schedule::Cosine),
            "step" => Ok(Schedule::Step),
            "constant" => Ok(Schedule::Constant),
            other => Err(GsdError::InvalidInput(format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_alpha: f64,
    pub schedule: Schedule,
    pub seed: u64,
    /// Whether alpha and beta of a disentangled head are updated. When off
    /// they stay at their initial values and carry no penalty.
    pub train_scalars: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            weight_decay: 5e-4,
            epochs: 200,
            batch_size: 128,
            lambda_alpha: 1.0,
            schedule: Schedule::Cosine,
            seed: 0,
            train_scalars: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GsdError::InvalidParameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(GsdError::InvalidParameter(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if !(self.lambda_alpha >= 0.0 && self.lambda_alpha.is_finite()) {
            return Err(GsdError::InvalidParameter(format!(
                "lambda_alpha must be nonnegative, got {}",
                self.lambda_alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(GsdError::InvalidParameter("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let lr = self.learning_rate;
        match self.schedule {
            Schedule::Constant => lr,
            Schedule::Cosine => {
                let e = self.epochs.max(1) as f64;
                lr * 0.5 * (1.0 + (PI * epoch as f64 / e).cos())
            }
            Schedule::Step => {
                let e = self.epochs as f64;
                let passed = [0.3, 0.6, 0.8]
                    .iter()
                    .filter(|&&f| epoch >= (f * e).round() as usize)
                    .count();
                lr * 0.2f64.powi(passed as i32)
            }
        }
    }
}

/// A named evaluation set tracked during training.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub name: &'a str,
    pub batch: &'a EmbeddingBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRecord {
    pub name: String,
    pub accuracy: f64,
    pub ece: f64,
    pub mean_norm: f64,
    pub mean_cosine: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean full objective over the epoch's mini-batches.
    pub loss: f64,
    pub accuracy: f64,
    pub mean_norm: f64,
    pub mean_cosine: f64,
    pub alpha: f64,
    pub beta: f64,
    pub monitors: Vec<MonitorRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    /// Epochs that ended with `beta < 0`.
    pub fn negative_beta_epochs(&self) -> usize {
        self.records.iter().filter(|r| r.beta < 0.0).count()
    }

    pub const TSV_HEADER: &'static str = "epoch\tlearning_rate\tloss\taccuracy\tmean_norm\tmean_cosine\talpha\tbeta";

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::TSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.epoch, r.learning_rate, r.loss, r.accuracy, r.mean_norm, r.mean_cosine, r.alpha, r.beta
            );
        }
        out
    }
}

/// Mini-batch SGD without monitors.
pub fn train(model: &Model, train_set: &EmbeddingBatch, cfg: &TrainConfig) -> Result<(Model, History)> {
    train_monitored(model, train_set, cfg, &[], BinningSpec::default())
}

/// Mini-batch SGD; after every epoch records training statistics and the
/// accuracy, ECE, mean norm and mean true-class cosine on each monitor.
pub fn train_monitored(
    model: &Model,
    train_set: &EmbeddingBatch,
    cfg: &TrainConfig,
    monitors: &[Monitor<'_>],
    bins: BinningSpec,
) -> Result<(Model, History)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(GsdError::Empty("training set"));
    }
    let mut model = model.clone();
    let mut history = History::default();
    let mut rng = GsdRng::derive(cfg.seed, SHUFFLE_STREAM);
    let scalars = scalars_trainable(&model, cfg);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = loss_and_grads_on(&model, train_set, chunk, cfg)?;
            if !loss.is_finite() {
                return Err(GsdError::Divergence(format!(
                    "non-finite loss at epoch {epoch}, batch {b} (learning rate {lr})"
                )));
            }
            sgd_step(&mut model, &grads, lr, scalars);
            if scalars && !(model.head.alpha > 0.0 && model.head.alpha.is_finite()) {
                return Err(GsdError::Divergence(format!(
                    "alpha left (0, inf) at epoch {epoch}, batch {b}: {} (learning rate {lr})",
                    model.head.alpha
                )));
            }
            loss_sum += loss;
            batches += 1;
        }
        history.records.push(epoch_record(&model, train_set, epoch, lr, loss_sum / batches as f64, monitors, bins)?);
    }
    Ok((model, history))
}

fn sgd_step(model: &mut Model, grads: &Gradients, lr: f64, scalars: bool) {
    for (layer, g) in model.encoder.layers_mut().iter_mut().zip(&grads.encoder) {
        axpy(-lr, g.weight.as_slice(), layer.weight.as_mut_slice());
        axpy(-lr, &g.bias, &mut layer.bias);
    }
    axpy(-lr, grads.weights.as_slice(), model.head.weights.as_mut_slice());
    if scalars {
        model.head.alpha -= lr * grads.alpha;
        model.head.beta -= lr * grads.beta;
    }
}

fn epoch_record(
    model: &Model,
    train_set: &EmbeddingBatch,
    epoch: usize,
    lr: f64,
    loss: f64,
    monitors: &[Monitor<'_>],
    bins: BinningSpec,
) -> Result<EpochRecord> {
    let (mean_norm, mean_cosine) = model.embedding_statistics(train_set)?;
    let acc = train_accuracy(model, train_set)?;
    let mut records = Vec::with_capacity(monitors.len());
    for m in monitors {
        let preds = model.predict(m.batch, Inference::Plain)?;
        let (mn, mc) = model.embedding_statistics(m.batch)?;
        records.push(MonitorRecord {
            name: m.name.to_string(),
            accuracy: accuracy(&preds.probs, m.batch.labels())?,
            ece: ece(&preds.probs, m.batch.labels(), bins)?,
            mean_norm: mn,
            mean_cosine: mc,
        });
    }
    let (alpha, beta) = match model.head_kind {
        HeadKind::Gsd => (model.head.alpha, model.head.beta),
        HeadKind::Vanilla => (1.0, 0.0),
    };
    Ok(EpochRecord {
        epoch,
        learning_rate: lr,
        loss,
        accuracy: acc,
        mean_norm,
        mean_cosine,
        alpha,
        beta,
        monitors: records,
    })
}

/// Argmax accuracy from `s W dx`; a zero embedding scores all classes 0.
fn train_accuracy(model: &Model, batch: &EmbeddingBatch) -> Result<f64> {
    let mut hits = 0usize;
    for i in 0..batch.len() {
        let z = model.embed(&batch.row_f64(i));
        let mut scores = model.head.weights.matvec(&z);
        let n = crate::linalg::norm(&z);
        if model.head_kind == HeadKind::Gsd && n > 0.0 {
            let s = (n + model.head.beta) / (model.head.alpha * n);
            scores.iter_mut().for_each(|v| *v *= s);
        }
        if crate::linalg::argmax(&scores) == batch.label(i) {
            hits += 1;
        }
    }
    Ok(hits as f64 / batch.len() as f64)
}

/// One row per (epoch, evaluation set).
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticsRow {
    pub epoch: usize,
    pub set: String,
    pub accuracy: f64,
    pub ece: f64,
    pub mean_norm: f64,
    pub mean_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingTable {
    pub rows: Vec<StatisticsRow>,
}

impl TrainingTable {
    pub const TSV_HEADER: &'static str = "epoch\tset\taccuracy\tece\tmean_norm\tmean_cosine";

    /// Values of one column for one set, in epoch order.
    pub fn series(&self, set: &str, column: fn(&StatisticsRow) -> f64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.set == set).map(column).collect()
    }

    pub fn set_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.set) {
                names.push(r.set.clone());
            }
        }
        names
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::TSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.epoch, r.set, r.accuracy, r.ece, r.mean_norm, r.mean_cosine
            );
        }
        out
    }
}

/// Flattens the monitor records of a history into a per-epoch table.
pub fn track_training_statistics(history: &History) -> Result<TrainingTable> {
    if history.records.is_empty() {
        return Err(GsdError::Empty("training history"));
    }
    let mut rows = Vec::new();
    for r in &history.records {
        for m in &r.monitors {
            rows.push(StatisticsRow {
                epoch: r.epoch,
                set: m.name.clone(),
                accuracy: m.accuracy,
                ece: m.ece,
                mean_norm: m.mean_norm,
                mean_cosine: m.mean_cosine,
            });
        }
    }
    Ok(TrainingTable { rows })
}
