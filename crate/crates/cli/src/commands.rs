use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gsd_core::calibration::{calibrate_temperature, calibrate_two_step, CalibrationConfig, CalibrationMethod, TwoStepOptions};
use gsd_core::data::{read_any, EmbeddingBatch};
use gsd_core::experiment::{
    aurocs_to_tsv, embedding_norms, histogram_to_tsv, norm_auroc, run_experiment, train_one, write_report,
    ExperimentSpec,
};
use gsd_core::metrics::{metrics_report, BinningSpec, MetricsReport};
use gsd_core::model::{read_model, write_model, HeadKind, Inference, Model};

/// Marks failures caused by unreadable or malformed inputs (exit status 2).
#[derive(Debug)]
pub struct InputProblem(pub String);

impl fmt::Display for InputProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputProblem {}

fn load_batch(path: &Path) -> Result<EmbeddingBatch> {
    read_any(path).with_context(|| InputProblem(format!("cannot read embeddings {}", path.display())))
}

fn load_model(path: &Path) -> Result<Model> {
    read_model(path).with_context(|| InputProblem(format!("cannot read checkpoint {}", path.display())))
}

fn load_spec(path: Option<&Path>) -> Result<ExperimentSpec> {
    match path {
        None => Ok(ExperimentSpec::default()),
        Some(p) => ExperimentSpec::read(p).with_context(|| InputProblem(format!("cannot read config {}", p.display()))),
    }
}

fn bins(n: usize) -> Result<BinningSpec> {
    BinningSpec::new(n).with_context(|| InputProblem(format!("invalid --bins {n}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

/// Writes a metrics table and checks it parses back to the same report.
fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    let text = report.to_tsv();
    write_text(path, &text)?;
    let back = MetricsReport::from_tsv(&fs::read_to_string(path)?)
        .with_context(|| format!("{} does not parse back", path.display()))?;
    if back.to_tsv() != text {
        bail!("{} does not round-trip", path.display());
    }
    Ok(())
}

fn write_checkpoint(path: &Path, model: &Model) -> Result<()> {
    write_model(model, path).with_context(|| format!("cannot write {}", path.display()))?;
    if read_model(path)? != *model {
        bail!("{} does not read back", path.display());
    }
    Ok(())
}

fn write_config(path: &Path, config: &CalibrationConfig) -> Result<()> {
    config.write(path).with_context(|| format!("cannot write {}", path.display()))?;
    if CalibrationConfig::read(path)? != *config {
        bail!("{} does not read back", path.display());
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned())
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub monitors: Vec<String>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub bins: Option<usize>,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut spec = load_spec(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.bins {
        spec.bins = bins(n)?;
    }
    let train_set = load_batch(&args.data)?;
    if train_set.is_empty() {
        return Err(anyhow::Error::new(InputProblem(format!("{} holds no samples", args.data.display()))));
    }
    let mut monitor_sets = vec![("train".to_string(), train_set.clone())];
    for m in &args.monitors {
        let (name, path) = m
            .split_once('=')
            .ok_or_else(|| anyhow::Error::new(InputProblem(format!("--monitor expects NAME=PATH, got {m:?}"))))?;
        monitor_sets.push((name.to_string(), load_batch(Path::new(path))?));
    }
    let monitors: Vec<(String, &EmbeddingBatch)> = monitor_sets.iter().map(|(n, b)| (n.clone(), b)).collect();

    create_dir(&args.out)?;
    write_text(&args.out.join("spec.txt"), &spec.to_text())?;
    for (name, kind) in [("vanilla", HeadKind::Vanilla), ("gsd", HeadKind::Gsd)] {
        let trained = train_one(&spec, kind, &train_set, &monitors).with_context(|| format!("training the {name} head"))?;
        write_checkpoint(&args.out.join(format!("{name}.gsdm")), &trained.model)?;
        write_text(&args.out.join(format!("history_{name}.tsv")), &trained.history.to_tsv())?;
        write_text(&args.out.join(format!("training_stats_{name}.tsv")), &trained.statistics.to_tsv())?;
        if trained.history.negative_beta_epochs() > 0 {
            eprintln!(
                "gsd: note: beta was negative after {} of {} epochs",
                trained.history.negative_beta_epochs(),
                trained.history.records.len()
            );
        }
    }
    Ok(())
}

pub struct CalibrateArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub method: CalibrationMethod,
    pub error: f64,
    pub epochs: usize,
    pub temperature_iterations: usize,
    pub bins: usize,
    pub out: PathBuf,
}

const BEFORE_AFTER_HEADER: &str = "stage\tmode\taccuracy\tece\tnll\tbrier\tnonpositive_norm";

fn before_after_row(stage: &str, mode: &str, model: &Model, inference: Inference, val: &EmbeddingBatch, spec: BinningSpec) -> Result<String> {
    let preds = model.predict(val, inference)?;
    let r = metrics_report(&preds.probs, val.labels(), spec)?;
    Ok(format!(
        "{stage}\t{mode}\t{}\t{}\t{}\t{}\t{}\n",
        r.accuracy,
        r.ece,
        r.nll,
        r.brier,
        preds.nonpositive_norms()
    ))
}

pub fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let spec = bins(args.bins)?;
    let model = load_model(&args.model)?;
    let val = load_batch(&args.data)?;
    if !(args.error > 0.0 && args.error < 1.0) {
        return Err(anyhow::Error::new(InputProblem(format!("--error must lie in (0, 1), got {}", args.error))));
    }
    create_dir(&args.out)?;
    let mut table = format!("{BEFORE_AFTER_HEADER}\n");
    table += &before_after_row("before", "trained", &model, Inference::Plain, &val, spec)?;
    match model.head_kind {
        HeadKind::Vanilla => {
            let cfg = calibrate_temperature(&model, &val, args.temperature_iterations)?;
            write_config(&args.out.join("calibration_temperature.cfg"), &cfg)?;
            table += &before_after_row("after", cfg.mode_name(), &model, cfg.inference(), &val, spec)?;
        }
        HeadKind::Gsd => {
            let opts = TwoStepOptions {
                method: args.method,
                error: args.error,
                bins: spec,
                nll_epochs: args.epochs,
            };
            let outcome = calibrate_two_step(&model, &val, opts)?;
            write_config(&args.out.join("calibration_affine.cfg"), &outcome.affine)?;
            write_config(&args.out.join("calibration_nonlinear.cfg"), &outcome.nonlinear)?;
            for cfg in [&outcome.affine, &outcome.nonlinear] {
                table += &before_after_row("after", cfg.mode_name(), &model, cfg.inference(), &val, spec)?;
            }
            if !outcome.excluded.is_empty() {
                eprintln!(
                    "gsd: note: {} grid candidates excluded for nonpositive effective norms",
                    outcome.excluded.len()
                );
                let list: Vec<String> = outcome.excluded.iter().map(f64::to_string).collect();
                write_text(&args.out.join("excluded_candidates.txt"), &(list.join("\n") + "\n"))?;
            }
        }
    }
    write_text(&args.out.join("calibration_metrics.tsv"), &table)
}

pub struct EvaluateArgs {
    pub model: PathBuf,
    pub calibration: Option<PathBuf>,
    pub data: Vec<PathBuf>,
    pub shifted: Vec<PathBuf>,
    pub bins: usize,
    pub histogram_bins: usize,
    pub out: PathBuf,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let spec = bins(args.bins)?;
    if args.histogram_bins == 0 {
        return Err(anyhow::Error::new(InputProblem("--histogram-bins must be positive".into())));
    }
    let model = load_model(&args.model)?;
    let inference = match &args.calibration {
        None => Inference::Plain,
        Some(p) => CalibrationConfig::read(p)
            .with_context(|| InputProblem(format!("cannot read calibration config {}", p.display())))?
            .inference(),
    };
    let ind: Vec<(PathBuf, EmbeddingBatch)> = args
        .data
        .iter()
        .map(|p| load_batch(p).map(|b| (p.clone(), b)))
        .collect::<Result<_>>()?;
    let shifted: Vec<(PathBuf, EmbeddingBatch)> = args
        .shifted
        .iter()
        .map(|p| load_batch(p).map(|b| (p.clone(), b)))
        .collect::<Result<_>>()?;
    create_dir(&args.out)?;
    for (i, (path, batch)) in ind.iter().chain(&shifted).enumerate() {
        let preds = model
            .predict(batch, inference)
            .with_context(|| format!("evaluating {}", path.display()))?;
        let report = metrics_report(&preds.probs, batch.labels(), spec)?;
        write_metrics(&args.out.join(format!("metrics_{i}_{}.tsv", stem(path))), &report)?;
        if preds.nonpositive_norms() > 0 {
            eprintln!(
                "gsd: note: {} samples of {} have a nonpositive effective norm",
                preds.nonpositive_norms(),
                path.display()
            );
        }
    }
    if !shifted.is_empty() {
        let (ref_path, reference) = &ind[0];
        let mut rows = Vec::new();
        let mut hist = String::new();
        let clean_norms = embedding_norms(&model, reference);
        for (path, batch) in &shifted {
            rows.push(norm_auroc(model.head_kind.name(), &model, reference, batch, &stem(path))?);
            hist += &format!("# {} vs {}\n", stem(ref_path), stem(path));
            hist += &histogram_to_tsv(
                &stem(ref_path),
                &stem(path),
                &clean_norms,
                &embedding_norms(&model, batch),
                args.histogram_bins,
            )?;
        }
        write_text(&args.out.join("auroc.tsv"), &aurocs_to_tsv(&rows))?;
        write_text(&args.out.join("norm_histogram.tsv"), &hist)?;
    }
    Ok(())
}

pub struct ExperimentArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub bins: Option<usize>,
    pub method: Option<CalibrationMethod>,
    pub error: Option<f64>,
}

pub fn experiment(args: &ExperimentArgs) -> Result<()> {
    let mut spec = load_spec(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(out) = &args.out {
        spec.out_dir = out.clone();
    }
    if let Some(n) = args.bins {
        spec.bins = bins(n)?;
    }
    if let Some(m) = args.method {
        spec.method = m;
    }
    if let Some(e) = args.error {
        spec.error = e;
    }
    spec.validate().context(InputProblem("invalid experiment spec".into()))?;
    let report = run_experiment(&spec)?;
    write_report(&report, &spec.out_dir)?;
    Ok(())
}
