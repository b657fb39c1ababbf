use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

use commands::InputProblem;

/// Train, calibrate and evaluate geometric-sensitivity-decomposition heads on
/// embedding files, or run the whole synthetic protocol.
#[derive(Debug, Parser)]
#[command(name = "gsd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Grid,
    Optimize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a plain head and a disentangled head on the same data and seed.
    Train {
        /// Training embeddings (.gsde, or .csv with header f0..f{d-1},label).
        #[arg(long)]
        data: PathBuf,
        /// key=value configuration file (see CONFIG.md); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra evaluation set tracked every epoch, as NAME=PATH. Repeatable.
        #[arg(long = "monitor", value_name = "NAME=PATH")]
        monitors: Vec<String>,
        /// Output directory for checkpoints and per-epoch tables.
        #[arg(long, default_value = "gsd-train")]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of equal-width confidence bins for ECE.
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Fit post-hoc calibration on IND validation data.
    Calibrate {
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Validation embeddings.
        #[arg(long)]
        data: PathBuf,
        /// Offset tuning: ECE grid search or NLL descent.
        #[arg(long, value_enum, default_value_t = MethodArg::Grid)]
        method: MethodArg,
        /// Approximation error of the nonlinear map at mu - sigma.
        #[arg(long, default_value_t = 0.1)]
        error: f64,
        /// Epochs of NLL descent for --method optimize.
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        /// Gradient-descent iterations for temperature scaling (plain heads).
        #[arg(long, default_value_t = 50)]
        temperature_iterations: usize,
        /// Number of equal-width confidence bins for ECE.
        #[arg(long, default_value_t = 15)]
        bins: usize,
        /// Output directory for configs and the before/after table.
        #[arg(long, default_value = "gsd-calibration")]
        out: PathBuf,
    },
    /// Report metrics per dataset, plus norm-based shift detection.
    Evaluate {
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Calibration config written by `calibrate`; the trained head is used when omitted.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// In-distribution embeddings. Repeatable; the first one is the detection reference.
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        /// Shifted embeddings scored against the first --data set. Repeatable.
        #[arg(long = "shifted")]
        shifted: Vec<PathBuf>,
        /// Number of equal-width confidence bins for ECE.
        #[arg(long, default_value_t = 15)]
        bins: usize,
        /// Number of bins of the norm histogram.
        #[arg(long, default_value_t = 20)]
        histogram_bins: usize,
        /// Output directory for the TSV tables.
        #[arg(long, default_value = "gsd-eval")]
        out: PathBuf,
    },
    /// Full synthetic protocol: data, training, calibration, evaluation, sweep.
    Experiment {
        /// key=value experiment spec (see CONFIG.md); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the spec output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the number of ECE bins.
        #[arg(long)]
        bins: Option<usize>,
        /// Overrides the offset tuning method.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Overrides the nonlinear-map approximation error.
        #[arg(long)]
        error: Option<f64>,
    },
}

impl MethodArg {
    fn core(self) -> gsd_core::calibration::CalibrationMethod {
        match self {
            MethodArg::Grid => gsd_core::calibration::CalibrationMethod::Grid,
            MethodArg::Optimize => gsd_core::calibration::CalibrationMethod::Optimize,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            data,
            config,
            monitors,
            out,
            seed,
            bins,
        } => commands::train(&commands::TrainArgs {
            data,
            config,
            monitors,
            out,
            seed,
            bins,
        }),
        Command::Calibrate {
            model,
            data,
            method,
            error,
            epochs,
            temperature_iterations,
            bins,
            out,
        } => commands::calibrate(&commands::CalibrateArgs {
            model,
            data,
            method: method.core(),
            error,
            epochs,
            temperature_iterations,
            bins,
            out,
        }),
        Command::Evaluate {
            model,
            calibration,
            data,
            shifted,
            bins,
            histogram_bins,
            out,
        } => commands::evaluate(&commands::EvaluateArgs {
            model,
            calibration,
            data,
            shifted,
            bins,
            histogram_bins,
            out,
        }),
        Command::Experiment {
            config,
            seed,
            out,
            bins,
            method,
            error,
        } => commands::experiment(&commands::ExperimentArgs {
            config,
            seed,
            out,
            bins,
            method: method.map(MethodArg::core),
            error,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("gsd: {err:#}");
            if err.downcast_ref::<InputProblem>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
