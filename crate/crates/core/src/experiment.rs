//! End-to-end protocol on synthetic clusters: train a plain and a
//! disentangled head on identical data, calibrate both, evaluate on clean and
//! shifted test sets, and emit report tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::calibration::{
    calibrate_temperature, calibrate_two_step, CalibrationConfig, CalibrationMethod, TwoStepOptions, DEFAULT_ERROR,
    DEFAULT_NLL_EPOCHS, DEFAULT_TEMPERATURE_ITERATIONS,
};
use crate::data::{apply_shift, gen_clusters, ClusterSpec, EmbeddingBatch, ShiftFamily, ShiftSpec, DEFAULT_NOISE_MULTIPLIERS};
use crate::error::{GsdError, Result};
use crate::linalg::norm;
use crate::metrics::{auroc, linear_fit, metrics_report, paired_histogram, pearson, BinningSpec, MetricsReport};
use crate::model::{
    track_training_statistics, train_monitored, write_model, Architecture, EncoderKind, HeadKind, History, Inference,
    Model, Monitor, Schedule, TrainConfig, TrainingTable,
};
use crate::rng::GsdRng;

/// Everything an experiment run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub num_classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub sigma: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub shift_family: ShiftFamily,
    pub shift_severities: Vec<f64>,
    pub encoder: EncoderKind,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub train: TrainConfig,
    pub method: CalibrationMethod,
    pub error: f64,
    pub nll_epochs: usize,
    pub temperature_iterations: usize,
    pub bins: BinningSpec,
    pub histogram_bins: usize,
    pub out_dir: PathBuf,
    pub sweep: bool,
    pub sweep_alphas: Vec<f64>,
    pub sweep_betas: Vec<f64>,
    pub sweep_epochs: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let sigma = 1.0;
        Self {
            seed: 0,
            num_classes: 4,
            dim: 16,
            separation: 3.0,
            sigma,
            train_per_class: 500,
            val_per_class: 250,
            test_per_class: 500,
            shift_family: ShiftFamily::GaussianNoise,
            shift_severities: DEFAULT_NOISE_MULTIPLIERS.iter().map(|m| m * sigma).collect(),
            encoder: EncoderKind::Mlp1,
            hidden_dim: 64,
            feature_dim: 16,
            train: TrainConfig::default(),
            method: CalibrationMethod::Grid,
            error: DEFAULT_ERROR,
            nll_epochs: DEFAULT_NLL_EPOCHS,
            temperature_iterations: DEFAULT_TEMPERATURE_ITERATIONS,
            bins: BinningSpec::default(),
            histogram_bins: 20,
            out_dir: PathBuf::from("gsd-out"),
            sweep: true,
            sweep_alphas: vec![1.0, 1.5, 2.0, 2.5],
            sweep_betas: vec![0.0, 1.0, 2.0, 3.0],
            sweep_epochs: 100,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| GsdError::InvalidInput(format!("key {key:?}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_num::<f64>(key, v.trim()))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(GsdError::InvalidInput(format!("key {key:?}: expected true or false, got {other:?}"))),
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentSpec {
    /// Parses `key=value` lines on top of the defaults. `#` starts a comment
    /// line. Unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        let mut severities_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| GsdError::InvalidInput(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "shift_severities" {
                severities_set = value != "default";
            }
            spec.set(key, value)
                .map_err(|e| GsdError::InvalidInput(format!("line {}: {e}", lineno + 1)))?;
        }
        if !severities_set && spec.shift_family == ShiftFamily::GaussianNoise {
            spec.shift_severities = DEFAULT_NOISE_MULTIPLIERS.iter().map(|m| m * spec.sigma).collect();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Sets one key. Values are validated by [`ExperimentSpec::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "num_classes" => self.num_classes = parse_num(key, value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "separation" => self.separation = parse_num(key, value)?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "train_per_class" => self.train_per_class = parse_num(key, value)?,
            "val_per_class" => self.val_per_class = parse_num(key, value)?,
            "test_per_class" => self.test_per_class = parse_num(key, value)?,
            "shift_family" => self.shift_family = ShiftFamily::parse(value)?,
            "shift_severities" => {
                if value != "default" {
                    self.shift_severities = parse_list(key, value)?;
                }
            }
            "encoder" => self.encoder = EncoderKind::parse(value)?,
            "hidden_dim" => self.hidden_dim = parse_num(key, value)?,
            "feature_dim" => self.feature_dim = parse_num(key, value)?,
            "learning_rate" => self.train.learning_rate = parse_num(key, value)?,
            "weight_decay" => self.train.weight_decay = parse_num(key, value)?,
            "epochs" => self.train.epochs = parse_num(key, value)?,
            "batch_size" => self.train.batch_size = parse_num(key, value)?,
            "lambda_alpha" => self.train.lambda_alpha = parse_num(key, value)?,
            "schedule" => self.train.schedule = Schedule::parse(value)?,
            "method" => self.method = CalibrationMethod::parse(value)?,
            "error" => self.error = parse_num(key, value)?,
            "nll_epochs" => self.nll_epochs = parse_num(key, value)?,
            "temperature_iterations" => self.temperature_iterations = parse_num(key, value)?,
            "bins" => self.bins = BinningSpec::new(parse_num(key, value)?)?,
            "histogram_bins" => self.histogram_bins = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "sweep" => self.sweep = parse_bool(key, value)?,
            "sweep_alphas" => self.sweep_alphas = parse_list(key, value)?,
            "sweep_betas" => self.sweep_betas = parse_list(key, value)?,
            "sweep_epochs" => self.sweep_epochs = parse_num(key, value)?,
            other => return Err(GsdError::InvalidInput(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster_spec(0, self.train_per_class)?;
        if self.val_per_class == 0 || self.test_per_class == 0 {
            return Err(GsdError::InvalidInput("val_per_class and test_per_class must be positive".into()));
        }
        ShiftSpec::new(self.shift_family, self.shift_severities.clone(), 0)?;
        if self.shift_severities.is_empty() {
            return Err(GsdError::InvalidInput("need at least one shift severity".into()));
        }
        if self.encoder != EncoderKind::Identity && self.feature_dim == 0 {
            return Err(GsdError::InvalidInput("feature_dim must be positive".into()));
        }
        if self.encoder == EncoderKind::Mlp1 && self.hidden_dim == 0 {
            return Err(GsdError::InvalidInput("hidden_dim must be positive".into()));
        }
        self.train.validate()?;
        if !(self.error > 0.0 && self.error < 1.0) {
            return Err(GsdError::InvalidParameter(format!("error must lie in (0, 1), got {}", self.error)));
        }
        if self.histogram_bins == 0 {
            return Err(GsdError::InvalidInput("histogram_bins must be positive".into()));
        }
        if self.sweep {
            if self.sweep_alphas.len() < 2 || self.sweep_betas.len() < 2 {
                return Err(GsdError::InvalidInput("the sweep needs at least two alphas and two betas".into()));
            }
            if let Some(a) = self.sweep_alphas.iter().find(|a| !(**a >= 1.0 && a.is_finite())) {
                return Err(GsdError::InvalidInput(format!("sweep alpha {a} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Resolved spec in the same `key=value` format.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("dim", self.dim.to_string()),
            ("separation", self.separation.to_string()),
            ("sigma", self.sigma.to_string()),
            ("train_per_class", self.train_per_class.to_string()),
            ("val_per_class", self.val_per_class.to_string()),
            ("test_per_class", self.test_per_class.to_string()),
            ("shift_family", self.shift_family.name().to_string()),
            ("shift_severities", join(&self.shift_severities)),
            ("encoder", self.encoder.name().to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lambda_alpha", t.lambda_alpha.to_string()),
            ("schedule", t.schedule.name().to_string()),
            ("method", self.method.name().to_string()),
            ("error", self.error.to_string()),
            ("nll_epochs", self.nll_epochs.to_string()),
            ("temperature_iterations", self.temperature_iterations.to_string()),
            ("bins", self.bins.num_bins.to_string()),
            ("histogram_bins", self.histogram_bins.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("sweep", self.sweep.to_string()),
            ("sweep_alphas", join(&self.sweep_alphas)),
            ("sweep_betas", join(&self.sweep_betas)),
            ("sweep_epochs", self.sweep_epochs.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    fn cluster_spec(&self, seed: u64, per_class: usize) -> Result<ClusterSpec> {
        ClusterSpec::axis_aligned(self.num_classes, self.dim, self.separation, self.sigma, per_class, seed)
    }

    /// Training configuration with the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Architecture {
        Architecture {
            encoder: self.encoder,
            input_dim,
            hidden_dim: self.hidden_dim,
            feature_dim: if self.encoder == EncoderKind::Identity { input_dim } else { self.feature_dim },
            num_classes,
        }
    }

    pub fn two_step_options(&self) -> TwoStepOptions {
        TwoStepOptions {
            method: self.method,
            error: self.error,
            bins: self.bins,
            nll_epochs: self.nll_epochs,
        }
    }
}

/// Sub-seeds of a run, one per independent random draw.
#[derive(Debug, Clone, Copy)]
struct Seeds {
    train: u64,
    val: u64,
    test: u64,
    shift: u64,
    init: u64,
}

impl Seeds {
    fn new(seed: u64) -> Self {
        let draw = |stream| GsdRng::derive(seed, stream).next_u64();
        Self {
            train: draw(1),
            val: draw(2),
            test: draw(3),
            shift: draw(4),
            init: draw(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub train: EmbeddingBatch,
    pub val: EmbeddingBatch,
    pub test: EmbeddingBatch,
    /// Test set under each shift severity, in increasing order.
    pub shifted: Vec<EmbeddingBatch>,
    pub severities: Vec<f64>,
}

impl ExperimentData {
    /// Clean test set followed by the shifted ones.
    pub fn eval_sets(&self) -> Vec<(String, &EmbeddingBatch)> {
        let mut sets = vec![("clean".to_string(), &self.test)];
        for (k, b) in self.shifted.iter().enumerate() {
            sets.push((format!("level_{}", k + 1), b));
        }
        sets
    }
}

pub fn generate_data(spec: &ExperimentSpec) -> Result<ExperimentData> {
    let seeds = Seeds::new(spec.seed);
    let train = gen_clusters(&spec.cluster_spec(seeds.train, spec.train_per_class)?)?;
    let val = gen_clusters(&spec.cluster_spec(seeds.val, spec.val_per_class)?)?;
    let test = gen_clusters(&spec.cluster_spec(seeds.test, spec.test_per_class)?)?;
    let shift = ShiftSpec::new(spec.shift_family, spec.shift_severities.clone(), seeds.shift)?;
    let shifted = (0..shift.num_levels())
        .map(|k| apply_shift(&test, &shift, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentData {
        train,
        val,
        test,
        shifted,
        severities: spec.shift_severities.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub history: History,
    pub statistics: TrainingTable,
}

/// Trains one head kind from the shared seeded initialization, tracking the
/// given evaluation sets every epoch.
pub fn train_one(
    spec: &ExperimentSpec,
    head_kind: HeadKind,
    train_set: &EmbeddingBatch,
    monitors: &[(String, &EmbeddingBatch)],
) -> Result<TrainedModel> {
    let seeds = Seeds::new(spec.seed);
    let init = Model::init(spec.architecture(train_set.dim(), train_set.num_classes()), head_kind, seeds.init)?;
    let monitors: Vec<Monitor<'_>> = monitors
        .iter()
        .map(|(name, batch)| Monitor { name, batch })
        .collect();
    let (model, history) = train_monitored(&init, train_set, &spec.train_config(), &monitors, spec.bins)?;
    let statistics = if history.records.is_empty() {
        TrainingTable::default()
    } else {
        track_training_statistics(&history)?
    };
    Ok(TrainedModel {
        model,
        history,
        statistics,
    })
}

/// The four compared methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Vanilla,
    TemperatureScaled,
    GsdAffine,
    GsdNonlinear,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Vanilla, Method::TemperatureScaled, Method::GsdAffine, Method::GsdNonlinear];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::TemperatureScaled => "temperature_scaled",
            Method::GsdAffine => "gsd_affine",
            Method::GsdNonlinear => "gsd_nonlinear",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibrations {
    pub temperature: CalibrationConfig,
    pub affine: CalibrationConfig,
    pub nonlinear: CalibrationConfig,
    pub excluded: Vec<f64>,
}

pub fn calibrate_all(spec: &ExperimentSpec, vanilla: &Model, gsd: &Model, val: &EmbeddingBatch) -> Result<Calibrations> {
    let temperature = calibrate_temperature(vanilla, val, spec.temperature_iterations)?;
    let two = calibrate_two_step(gsd, val, spec.two_step_options())?;
    Ok(Calibrations {
        temperature,
        affine: two.affine,
        nonlinear: two.nonlinear,
        excluded: two.excluded,
    })
}

/// Model and inference mode behind each method.
pub fn method_setup<'a>(method: Method, vanilla: &'a Model, gsd: &'a Model, cal: &Calibrations) -> (&'a Model, Inference) {
    match method {
        Method::Vanilla => (vanilla, Inference::Plain),
        Method::TemperatureScaled => (vanilla, cal.temperature.inference()),
        Method::GsdAffine => (gsd, cal.affine.inference()),
        Method::GsdNonlinear => (gsd, cal.nonlinear.inference()),
    }
}

/// Per-sample check that a calibration leaves predictions alone wherever the
/// effective norm stays positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCheck {
    pub method: String,
    pub set: String,
    pub samples: usize,
    pub nonpositive_norm: usize,
    /// Samples with positive effective norm whose argmax changed.
    pub changed: usize,
}

/// Returns `(samples with a nonpositive effective norm before or after, changed predictions)`.
pub fn check_predictions(model: &Model, inference: Inference, batch: &EmbeddingBatch) -> Result<(usize, usize)> {
    let before = model.predict(batch, Inference::Plain)?;
    let after = model.predict(batch, inference)?;
    let mut nonpositive = 0;
    let mut changed = 0;
    for i in 0..batch.len() {
        if after.effective_norms[i] <= 0.0 || before.effective_norms[i] <= 0.0 {
            nonpositive += 1;
        } else if before.predicted[i] != after.predicted[i] {
            changed += 1;
        }
    }
    Ok((nonpositive, changed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub datasets: Vec<String>,
    /// `(metric, method, one value per dataset)`.
    pub rows: Vec<(String, String, Vec<f64>)>,
}

pub const SUMMARY_METRICS: [&str; 4] = ["accuracy", "ece", "nll", "brier"];

impl SummaryTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tmethod");
        for d in &self.datasets {
            out.push('\t');
            out.push_str(d);
        }
        out.push('\n');
        for (metric, method, values) in &self.rows {
            let _ = write!(out, "{metric}\t{method}");
            for v in values {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn get(&self, metric: &str, method: &str) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|(m, me, _)| m == metric && me == method)
            .map(|(_, _, v)| v.as_slice())
    }
}

fn metric_value(report: &MetricsReport, metric: &str) -> f64 {
    match metric {
        "accuracy" => report.accuracy,
        "ece" => report.ece,
        "nll" => report.nll,
        "brier" => report.brier,
        _ => f64::NAN,
    }
}

/// Norm-based detection of each shifted set against the clean one.
#[derive(Debug, Clone, PartialEq)]
pub struct AurocRow {
    pub model: String,
    pub set: String,
    pub auroc: f64,
    pub mean_norm_clean: f64,
    pub mean_norm_shifted: f64,
}

pub const AUROC_TSV_HEADER: &str = "model\tset\tauroc\tmean_norm_clean\tmean_norm_shifted";

pub fn aurocs_to_tsv(rows: &[AurocRow]) -> String {
    let mut out = format!("{AUROC_TSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.model, r.set, r.auroc, r.mean_norm_clean, r.mean_norm_shifted
        );
    }
    out
}

/// `|dx|` for every sample.
pub fn embedding_norms(model: &Model, batch: &EmbeddingBatch) -> Vec<f64> {
    (0..batch.len()).map(|i| norm(&model.embed(&batch.row_f64(i)))).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// IND samples are the positives: a higher norm means "in distribution".
pub fn norm_auroc(model_name: &str, model: &Model, clean: &EmbeddingBatch, shifted: &EmbeddingBatch, set: &str) -> Result<AurocRow> {
    let ind = embedding_norms(model, clean);
    let ood = embedding_norms(model, shifted);
    Ok(AurocRow {
        model: model_name.to_string(),
        set: set.to_string(),
        auroc: auroc(&ind, &ood)?,
        mean_norm_clean: mean(&ind),
        mean_norm_shifted: mean(&ood),
    })
}

pub fn histogram_to_tsv(first_name: &str, second_name: &str, first: &[f64], second: &[f64], bins: usize) -> Result<String> {
    let h = paired_histogram(first, second, bins)?;
    let mut out = format!("lower\tupper\t{first_name}\t{second_name}\n");
    for b in 0..bins {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", h.edges[b], h.edges[b + 1], h.first[b], h.second[b]);
    }
    Ok(out)
}

/// Pearson correlation across epochs between ECE and the norm or cosine
/// statistic, per model and evaluation set. `None` when a series is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub model: String,
    pub set: String,
    pub ece_vs_norm: Option<f64>,
    pub ece_vs_cosine: Option<f64>,
    pub accuracy_vs_norm: Option<f64>,
    pub accuracy_vs_cosine: Option<f64>,
}

fn corr(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    match pearson(xs, ys) {
        Ok(r) => Ok(Some(r)),
        Err(GsdError::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn correlation_rows(model_name: &str, table: &TrainingTable) -> Result<Vec<CorrelationRow>> {
    let mut rows = Vec::new();
    for set in table.set_names() {
        let ece = table.series(&set, |r| r.ece);
        let acc = table.series(&set, |r| r.accuracy);
        let nrm = table.series(&set, |r| r.mean_norm);
        let cos = table.series(&set, |r| r.mean_cosine);
        if ece.len() < 2 {
            continue;
        }
        rows.push(CorrelationRow {
            model: model_name.to_string(),
            set: set.clone(),
            ece_vs_norm: corr(&ece, &nrm)?,
            ece_vs_cosine: corr(&ece, &cos)?,
            accuracy_vs_norm: corr(&acc, &nrm)?,
            accuracy_vs_cosine: corr(&acc, &cos)?,
        });
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

pub fn correlations_to_tsv(rows: &[CorrelationRow]) -> String {
    let mut out = String::from("model\tset\tece_vs_norm\tece_vs_cosine\taccuracy_vs_norm\taccuracy_vs_cosine\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.model,
            r.set,
            opt(r.ece_vs_norm),
            opt(r.ece_vs_cosine),
            opt(r.accuracy_vs_norm),
            opt(r.accuracy_vs_cosine)
        );
    }
    out
}

/// Mean `|dx|` and mean true-class angle of a model with fixed `alpha`, `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub beta: f64,
    /// `arccos(1 / alpha)`: the relaxation angle encoded by `alpha`.
    pub relaxation_angle: f64,
    pub mean_norm: f64,
    pub mean_angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepFit {
    /// `"alpha"` when alpha is held fixed and beta varies, `"beta"` otherwise.
    pub fixed: &'static str,
    pub value: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Mean norm against beta at each fixed alpha.
    pub norm_fits: Vec<SweepFit>,
    /// Mean angle against `arccos(1 / alpha)` at each fixed beta.
    pub angle_fits: Vec<SweepFit>,
}

impl SweepReport {
    pub fn points_tsv(&self) -> String {
        let mut out = String::from("alpha\tbeta\trelaxation_angle\tmean_norm\tmean_angle\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                p.alpha, p.beta, p.relaxation_angle, p.mean_norm, p.mean_angle
            );
        }
        out
    }

    pub fn fits_tsv(&self) -> String {
        let mut out = String::from("response\tfixed\tvalue\tslope\tintercept\tr_squared\n");
        for (response, fits) in [("mean_norm", &self.norm_fits), ("mean_angle", &self.angle_fits)] {
            for f in fits {
                let _ = writeln!(
                    out,
                    "{response}\t{}\t{}\t{}\t{}\t{}",
                    f.fixed, f.value, f.slope, f.intercept, f.r_squared
                );
            }
        }
        out
    }
}

/// Mean `|dx|` and mean `arccos(cos(dphi_y))` over a batch.
pub fn norm_and_angle(model: &Model, batch: &EmbeddingBatch) -> (f64, f64) {
    let mut n_sum = 0.0;
    let mut a_sum = 0.0;
    for i in 0..batch.len() {
        let z = model.embed(&batch.row_f64(i));
        let w = model.head.weights.row(batch.label(i));
        let (zn, wn) = (norm(&z), norm(w));
        n_sum += zn;
        let cos = if zn > 0.0 && wn > 0.0 {
            (crate::linalg::dot(w, &z) / (zn * wn)).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        a_sum += cos.acos();
    }
    let n = batch.len() as f64;
    (n_sum / n, a_sum / n)
}

fn fit(fixed: &'static str, value: f64, xs: &[f64], ys: &[f64]) -> Result<SweepFit> {
    let f = linear_fit(xs, ys)?;
    Ok(SweepFit {
        fixed,
        value,
        slope: f.slope,
        intercept: f.intercept,
        r_squared: f.r_squared,
    })
}

/// Trains a disentangled head at every `(alpha, beta)` with both scalars
/// frozen, then fits the norm and angle trends.
pub fn alpha_beta_sweep(spec: &ExperimentSpec, data: &ExperimentData) -> Result<SweepReport> {
    let seeds = Seeds::new(spec.seed);
    let cfg = TrainConfig {
        epochs: spec.sweep_epochs,
        train_scalars: false,
        ..spec.train_config()
    };
    let base = Model::init(spec.architecture(data.train.dim(), data.train.num_classes()), HeadKind::Gsd, seeds.init)?;
    let mut points = Vec::new();
    for &alpha in &spec.sweep_alphas {
        for &beta in &spec.sweep_betas {
            let mut init = base.clone();
            init.head.alpha = alpha;
            init.head.beta = beta;
            init.head.validate()?;
            let (model, _) = train_monitored(&init, &data.train, &cfg, &[], spec.bins)?;
            let (mean_norm, mean_angle) = norm_and_angle(&model, &data.test);
            points.push(SweepPoint {
                alpha,
                beta,
                relaxation_angle: (1.0 / alpha).acos(),
                mean_norm,
                mean_angle,
            });
        }
    }
    let mut norm_fits = Vec::new();
    for &alpha in &spec.sweep_alphas {
        let pts: Vec<&SweepPoint> = points.iter().filter(|p| p.alpha == alpha).collect();
        let xs: Vec<f64> = pts.iter().map(|p| p.beta).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.mean_norm).collect();
        norm_fits.push(fit("alpha", alpha, &xs, &ys)?);
    }
    let mut angle_fits = Vec::new();
    for &beta in &spec.sweep_betas {
        let pts: Vec<&SweepPoint> = points.iter().filter(|p| p.beta == beta).collect();
        let xs: Vec<f64> = pts.iter().map(|p| p.relaxation_angle).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.mean_angle).collect();
        angle_fits.push(fit("beta", beta, &xs, &ys)?);
    }
    Ok(SweepReport {
        points,
        norm_fits,
        angle_fits,
    })
}

/// Everything produced by one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub vanilla: TrainedModel,
    pub gsd: TrainedModel,
    pub calibrations: Calibrations,
    /// `(method, dataset, report)` for every method and evaluation set.
    pub reports: Vec<(Method, String, MetricsReport)>,
    /// Uncalibrated disentangled head on every evaluation set.
    pub gsd_uncalibrated: Vec<(String, MetricsReport)>,
    pub summary: SummaryTable,
    pub checks: Vec<PredictionCheck>,
    pub aurocs: Vec<AurocRow>,
    pub norm_histograms: Vec<(String, String)>,
    pub correlations: Vec<CorrelationRow>,
    pub sweep: Option<SweepReport>,
}

impl ExperimentReport {
    pub fn checks_tsv(&self) -> String {
        let mut out = String::from("method\tset\tsamples\tnonpositive_norm\tchanged_predictions\n");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                c.method, c.set, c.samples, c.nonpositive_norm, c.changed
            );
        }
        out
    }
}

/// Runs the whole protocol in memory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let data = generate_data(spec)?;
    let sets = data.eval_sets();
    let vanilla = train_one(spec, HeadKind::Vanilla, &data.train, &sets)?;
    let gsd = train_one(spec, HeadKind::Gsd, &data.train, &sets)?;
    let calibrations = calibrate_all(spec, &vanilla.model, &gsd.model, &data.val)?;

    let mut reports = Vec::new();
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for method in Method::ALL {
        let (model, inference) = method_setup(method, &vanilla.model, &gsd.model, &calibrations);
        let mut per_set = Vec::new();
        for (name, batch) in sets.iter().chain(std::iter::once(&("val".to_string(), &data.val))) {
            let preds = model.predict(batch, inference)?;
            let report = metrics_report(&preds.probs, batch.labels(), spec.bins)?;
            let (nonpositive, changed) = check_predictions(model, inference, batch)?;
            checks.push(PredictionCheck {
                method: method.name().to_string(),
                set: name.clone(),
                samples: batch.len(),
                nonpositive_norm: nonpositive,
                changed,
            });
            if name != "val" {
                per_set.push(report.clone());
            }
            reports.push((method, name.clone(), report));
        }
        for metric in SUMMARY_METRICS {
            rows.push((
                metric.to_string(),
                method.name().to_string(),
                per_set.iter().map(|r| metric_value(r, metric)).collect(),
            ));
        }
    }
    let summary = SummaryTable {
        datasets: sets.iter().map(|(n, _)| n.clone()).collect(),
        rows,
    };
    let mut gsd_uncalibrated = Vec::new();
    for (name, batch) in &sets {
        let preds = gsd.model.predict(batch, Inference::Plain)?;
        gsd_uncalibrated.push((name.clone(), metrics_report(&preds.probs, batch.labels(), spec.bins)?));
    }

    let mut aurocs = Vec::new();
    let mut norm_histograms = Vec::new();
    let last = data.shifted.len() - 1;
    for (name, model) in [("vanilla", &vanilla.model), ("gsd", &gsd.model)] {
        for (k, shifted) in data.shifted.iter().enumerate() {
            aurocs.push(norm_auroc(name, model, &data.test, shifted, &format!("level_{}", k + 1))?);
        }
        let clean = embedding_norms(model, &data.test);
        let worst = embedding_norms(model, &data.shifted[last]);
        norm_histograms.push((
            name.to_string(),
            histogram_to_tsv("clean", &format!("level_{}", last + 1), &clean, &worst, spec.histogram_bins)?,
        ));
    }

    let mut correlations = correlation_rows("vanilla", &vanilla.statistics)?;
    correlations.extend(correlation_rows("gsd", &gsd.statistics)?);
    let sweep = if spec.sweep {
        Some(alpha_beta_sweep(spec, &data)?)
    } else {
        None
    };

    Ok(ExperimentReport {
        spec: spec.clone(),
        vanilla,
        gsd,
        calibrations,
        reports,
        gsd_uncalibrated,
        summary,
        checks,
        aurocs,
        norm_histograms,
        correlations,
        sweep,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

/// Writes every table, checkpoint and config under `dir`, then reads the
/// checkpoints and configs back to make sure they parse. Returns the paths.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("metrics"))?;
    let mut paths = Vec::new();
    paths.push(write(dir, "spec.txt", &report.spec.to_text())?);
    for (name, trained) in [("vanilla", &report.vanilla), ("gsd", &report.gsd)] {
        let ckpt = dir.join(format!("{name}.gsdm"));
        write_model(&trained.model, &ckpt)?;
        if crate::model::read_model(&ckpt)? != trained.model {
            return Err(GsdError::InvalidInput(format!("{} does not read back", ckpt.display())));
        }
        paths.push(ckpt);
        paths.push(write(dir, &format!("history_{name}.tsv"), &trained.history.to_tsv())?);
        paths.push(write(dir, &format!("training_stats_{name}.tsv"), &trained.statistics.to_tsv())?);
    }
    let cal = &report.calibrations;
    for (name, cfg) in [
        ("calibration_temperature.cfg", &cal.temperature),
        ("calibration_affine.cfg", &cal.affine),
        ("calibration_nonlinear.cfg", &cal.nonlinear),
    ] {
        let path = dir.join(name);
        cfg.write(&path)?;
        if CalibrationConfig::read(&path)? != *cfg {
            return Err(GsdError::InvalidInput(format!("{} does not read back", path.display())));
        }
        paths.push(path);
    }
    if !cal.excluded.is_empty() {
        paths.push(write(dir, "calibration_excluded.txt", &format!("{}\n", join(&cal.excluded)))?);
    }
    for (method, set, r) in &report.reports {
        paths.push(write(&dir.join("metrics"), &format!("{}_{set}.tsv", method.name()), &r.to_tsv())?);
    }
    for (set, r) in &report.gsd_uncalibrated {
        paths.push(write(&dir.join("metrics"), &format!("gsd_uncalibrated_{set}.tsv"), &r.to_tsv())?);
    }
    paths.push(write(dir, "summary.tsv", &report.summary.to_tsv())?);
    paths.push(write(dir, "prediction_check.tsv", &report.checks_tsv())?);
    paths.push(write(dir, "auroc.tsv", &aurocs_to_tsv(&report.aurocs))?);
    for (name, hist) in &report.norm_histograms {
        paths.push(write(dir, &format!("norm_histogram_{name}.tsv"), hist)?);
    }
    paths.push(write(dir, "correlation.tsv", &correlations_to_tsv(&report.correlations))?);
    if let Some(sweep) = &report.sweep {
        paths.push(write(dir, "sweep.tsv", &sweep.points_tsv())?);
        paths.push(write(dir, "sweep_fits.tsv", &sweep.fits_tsv())?);
    }
    Ok(paths)
}
