//! Python bindings for `gsd_core`.
//!
//! Matrices cross the boundary as lists of rows; labels as lists of ints.

use std::path::PathBuf;

use gsd_core::calibration::{self, CalibrationConfig, CalibrationMethod, TwoStepOptions};
use gsd_core::data::{self, ClusterSpec, EmbeddingBatch};
use gsd_core::geometry::{self, DecompositionInputs};
use gsd_core::metrics::{self, BinningSpec};
use gsd_core::model::{self, Architecture, EncoderKind, HeadKind, Inference, Model, Schedule, TrainConfig};
use gsd_core::{GsdError, Matrix};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: GsdError) -> PyErr {
    match err {
        GsdError::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    if let Some(r) = rows.iter().find(|r| r.len() != rows[0].len()) {
        return Err(PyValueError::new_err(format!(
            "ragged matrix: rows of length {} and {}",
            rows[0].len(),
            r.len()
        )));
    }
    Ok(Matrix::from_rows(rows))
}

/// Per-epoch `(loss, accuracy, alpha, beta)`.
type EpochSummary = Vec<(f64, f64, f64, f64)>;

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

#[pyclass(name = "EmbeddingBatch", module = "gsd")]
struct PyBatch {
    inner: EmbeddingBatch,
}

#[pymethods]
impl PyBatch {
    #[new]
    #[pyo3(signature = (features, labels, num_classes, dim=None))]
    fn new(features: Vec<Vec<f64>>, labels: Vec<u32>, num_classes: usize, dim: Option<usize>) -> PyResult<Self> {
        let dim = match (dim, features.first()) {
            (Some(d), _) => d,
            (None, Some(r)) => r.len(),
            (None, None) => return Err(PyValueError::new_err("dim is required for an empty batch")),
        };
        if features.iter().any(|r| r.len() != dim) {
            return Err(PyValueError::new_err(format!("every feature row must have length {dim}")));
        }
        let flat = features.iter().flatten().map(|&v| v as f32).collect();
        EmbeddingBatch::new(flat, dim, labels, num_classes)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    /// Reads a GSDE file, or a CSV when the path ends in `.csv`.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        data::read_any(path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        data::write_embeddings(&self.inner, path).map_err(to_py)
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        data::decode_embeddings(bytes).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_bytes(&self) -> Vec<u8> {
        data::encode_embeddings(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn labels(&self) -> Vec<u32> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|i| self.inner.row_f64(i)).collect()
    }

    /// Copy perturbed by one level of the given shift family.
    #[pyo3(signature = (severity, family="gaussian_noise", seed=0))]
    fn shifted(&self, severity: f64, family: &str, seed: u64) -> PyResult<Self> {
        let family = data::ShiftFamily::parse(family).map_err(to_py)?;
        let spec = data::ShiftSpec::new(family, vec![severity], seed).map_err(to_py)?;
        data::apply_shift(&self.inner, &spec, 0)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "EmbeddingBatch(n={}, dim={}, num_classes={})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.num_classes()
        )
    }
}

/// Isotropic Gaussian clusters with class `k` centred at `separation * e_k`.
#[pyfunction]
#[pyo3(signature = (num_classes, dim, separation, sigma, samples_per_class, seed=0))]
fn gen_clusters(
    num_classes: usize,
    dim: usize,
    separation: f64,
    sigma: f64,
    samples_per_class: usize,
    seed: u64,
) -> PyResult<PyBatch> {
    let spec = ClusterSpec::axis_aligned(num_classes, dim, separation, sigma, samples_per_class, seed).map_err(to_py)?;
    data::gen_clusters(&spec).map(|inner| PyBatch { inner }).map_err(to_py)
}

#[pyclass(name = "CalibrationConfig", module = "gsd")]
struct PyCalibration {
    inner: CalibrationConfig,
}

#[pymethods]
impl PyCalibration {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        CalibrationConfig::from_text(text)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        CalibrationConfig::read(path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(path).map_err(to_py)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode_name()
    }

    /// `T`, `beta_prime` or `(beta_prime, c)` depending on the mode.
    #[getter]
    fn parameters(&self) -> Vec<f64> {
        match self.inner.mode {
            calibration::CalibrationMode::Temperature(t) => vec![t],
            calibration::CalibrationMode::AffineBeta(b) => vec![b],
            calibration::CalibrationMode::Nonlinear { beta_prime, c } => vec![beta_prime, c],
        }
    }

    fn __repr__(&self) -> String {
        format!("CalibrationConfig({:?}, {:?})", self.inner.mode_name(), self.parameters())
    }
}

#[pyclass(name = "Predictions", module = "gsd", get_all)]
struct PyPredictions {
    logits: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    predicted: Vec<usize>,
    delta_norms: Vec<f64>,
    effective_norms: Vec<f64>,
}

#[pyclass(name = "Model", module = "gsd")]
struct PyModel {
    inner: Model,
}

fn head_kind(s: &str) -> PyResult<HeadKind> {
    match s {
        "vanilla" => Ok(HeadKind::Vanilla),
        "gsd" => Ok(HeadKind::Gsd),
        other => Err(PyValueError::new_err(format!("unknown head {other:?}, expected vanilla or gsd"))),
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (input_dim, num_classes, head="gsd", encoder="mlp1", hidden_dim=64, feature_dim=16, seed=0))]
    fn new(
        input_dim: usize,
        num_classes: usize,
        head: &str,
        encoder: &str,
        hidden_dim: usize,
        feature_dim: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let arch = Architecture {
            encoder: EncoderKind::parse(encoder).map_err(to_py)?,
            input_dim,
            hidden_dim,
            feature_dim,
            num_classes,
        };
        Model::init(arch, head_kind(head)?, seed)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        model::read_model(path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        model::write_model(&self.inner, path).map_err(to_py)
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        model::decode_model(bytes).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_bytes(&self) -> Vec<u8> {
        model::encode_model(&self.inner)
    }

    #[getter]
    fn head(&self) -> &'static str {
        self.inner.head_kind.name()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.head.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.head.beta
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    /// Trains a copy and returns it with per-epoch `(loss, accuracy, alpha, beta)`.
    #[pyo3(signature = (
        batch, epochs=200, learning_rate=0.1, weight_decay=5e-4, batch_size=128,
        lambda_alpha=1.0, schedule="cosine", seed=0, train_scalars=true
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &self,
        py: Python<'_>,
        batch: &PyBatch,
        epochs: usize,
        learning_rate: f64,
        weight_decay: f64,
        batch_size: usize,
        lambda_alpha: f64,
        schedule: &str,
        seed: u64,
        train_scalars: bool,
    ) -> PyResult<(PyModel, EpochSummary)> {
        let cfg = TrainConfig {
            learning_rate,
            weight_decay,
            epochs,
            batch_size,
            lambda_alpha,
            schedule: Schedule::parse(schedule).map_err(to_py)?,
            seed,
            train_scalars,
        };
        let (trained, history) = py
            .detach(|| model::train(&self.inner, &batch.inner, &cfg))
            .map_err(to_py)?;
        let records = history
            .records
            .iter()
            .map(|r| (r.loss, r.accuracy, r.alpha, r.beta))
            .collect();
        Ok((PyModel { inner: trained }, records))
    }

    /// Forward pass; `calibration` selects the inference mode, `temperature` a plain rescale.
    #[pyo3(signature = (batch, calibration=None, temperature=None))]
    fn predict(
        &self,
        batch: &PyBatch,
        calibration: Option<&PyCalibration>,
        temperature: Option<f64>,
    ) -> PyResult<PyPredictions> {
        let inference = match (calibration, temperature) {
            (Some(_), Some(_)) => {
                return Err(PyValueError::new_err("pass either calibration or temperature, not both"))
            }
            (Some(c), None) => c.inner.inference(),
            (None, Some(t)) => Inference::Temperature(t),
            (None, None) => Inference::Plain,
        };
        let p = self.inner.predict(&batch.inner, inference).map_err(to_py)?;
        Ok(PyPredictions {
            logits: rows(&p.logits),
            probs: rows(&p.probs),
            predicted: p.predicted,
            delta_norms: p.delta_norms,
            effective_norms: p.effective_norms,
        })
    }

    fn embed(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.inner.input_dim() {
            return Err(PyValueError::new_err(format!(
                "expected {} inputs, got {}",
                self.inner.input_dim(),
                x.len()
            )));
        }
        Ok(self.inner.embed(&x))
    }

    /// Temperature scaling for vanilla heads.
    #[pyo3(signature = (val, iterations=calibration::DEFAULT_TEMPERATURE_ITERATIONS))]
    fn calibrate_temperature(&self, val: &PyBatch, iterations: usize) -> PyResult<PyCalibration> {
        calibration::calibrate_temperature(&self.inner, &val.inner, iterations)
            .map(|inner| PyCalibration { inner })
            .map_err(to_py)
    }

    /// Offset tuning then the nonlinear map; returns `(affine, nonlinear)`.
    #[pyo3(signature = (val, method="grid", error=calibration::DEFAULT_ERROR, bins=metrics::DEFAULT_NUM_BINS, nll_epochs=calibration::DEFAULT_NLL_EPOCHS))]
    fn calibrate(
        &self,
        val: &PyBatch,
        method: &str,
        error: f64,
        bins: usize,
        nll_epochs: usize,
    ) -> PyResult<(PyCalibration, PyCalibration)> {
        let opts = TwoStepOptions {
            method: CalibrationMethod::parse(method).map_err(to_py)?,
            error,
            bins: BinningSpec::new(bins).map_err(to_py)?,
            nll_epochs,
        };
        let out = calibration::calibrate_two_step(&self.inner, &val.inner, opts).map_err(to_py)?;
        Ok((PyCalibration { inner: out.affine }, PyCalibration { inner: out.nonlinear }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(head={:?}, encoder={:?}, alpha={}, beta={})",
            self.inner.head_kind.name(),
            self.inner.encoder.kind().name(),
            self.inner.head.alpha,
            self.inner.head.beta
        )
    }
}

/// `(logit, w_norm, x_norm, cos_phi)` of `<w, x>`.
#[pyfunction]
fn geometric_logit(w: Vec<f64>, x: Vec<f64>) -> PyResult<(f64, f64, f64, f64)> {
    let g = geometry::geometric_logit(&w, &x).map_err(to_py)?;
    Ok((g.logit, g.w_norm, g.x_norm, g.cos_phi))
}

/// `(lhs, rhs)` of the decomposed-logit expansion.
#[pyfunction]
fn exact_expansion(delta_norm: f64, c_x: f64, delta_phi: f64, c_phi: f64) -> PyResult<(f64, f64)> {
    let d = DecompositionInputs::new(delta_norm, c_x, delta_phi, c_phi).map_err(to_py)?;
    let e = geometry::exact_expansion(&d);
    Ok((e.lhs, e.rhs))
}

#[pyfunction]
fn approx_logit(delta_norm: f64, c_x: f64, delta_phi: f64, c_phi: f64) -> PyResult<f64> {
    let d = DecompositionInputs::new(delta_norm, c_x, delta_phi, c_phi).map_err(to_py)?;
    Ok(geometry::approx_logit(&d))
}

#[pyfunction]
fn compute_c(mu: f64, sigma: f64, error: f64) -> PyResult<f64> {
    geometry::compute_c(mu, sigma, error).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (probs, labels, bins=metrics::DEFAULT_NUM_BINS))]
fn ece(probs: Vec<Vec<f64>>, labels: Vec<u32>, bins: usize) -> PyResult<f64> {
    let spec = BinningSpec::new(bins).map_err(to_py)?;
    metrics::ece(&matrix(&probs)?, &labels, spec).map_err(to_py)
}

#[pyfunction]
fn nll(probs: Vec<Vec<f64>>, labels: Vec<u32>) -> PyResult<f64> {
    metrics::nll(&matrix(&probs)?, &labels).map_err(to_py)
}

#[pyfunction]
fn brier(probs: Vec<Vec<f64>>, labels: Vec<u32>) -> PyResult<f64> {
    let m = matrix(&probs)?;
    let k = m.cols();
    metrics::brier(&m, &labels, k).map_err(to_py)
}

#[pyfunction]
fn accuracy(probs: Vec<Vec<f64>>, labels: Vec<u32>) -> PyResult<f64> {
    metrics::accuracy(&matrix(&probs)?, &labels).map_err(to_py)
}

#[pyfunction]
fn auroc(scores_positive: Vec<f64>, scores_negative: Vec<f64>) -> PyResult<f64> {
    metrics::auroc(&scores_positive, &scores_negative).map_err(to_py)
}

#[pymodule]
fn gsd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBatch>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyCalibration>()?;
    m.add_class::<PyPredictions>()?;
    m.add_function(wrap_pyfunction!(gen_clusters, m)?)?;
    m.add_function(wrap_pyfunction!(geometric_logit, m)?)?;
    m.add_function(wrap_pyfunction!(exact_expansion, m)?)?;
    m.add_function(wrap_pyfunction!(approx_logit, m)?)?;
    m.add_function(wrap_pyfunction!(compute_c, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(nll, m)?)?;
    m.add_function(wrap_pyfunction!(brier, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    Ok(())
}
