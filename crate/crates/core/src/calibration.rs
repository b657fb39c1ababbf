//! Post-hoc calibration: temperature scaling, offset tuning for the
//! disentangled head, norm statistics and the nonlinear norm map.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::EmbeddingBatch;
use crate::error::{GsdError, Result};
use crate::geometry::{compute_c, cosine_from_parts, effective_norm_affine, AffineNormParams};
use crate::linalg::{dot, log_sum_exp, norm, softmax, Matrix};
use crate::metrics::{ece, BinningSpec};
use crate::model::{HeadKind, Inference, Model, NormMode};

pub const DEFAULT_ERROR: f64 = 0.1;
pub const DEFAULT_NLL_EPOCHS: usize = 10;
pub const DEFAULT_TEMPERATURE_ITERATIONS: usize = 50;
pub const TEMPERATURE_LR: f64 = 0.01;
pub const TEMPERATURE_RANGE: (f64, f64) = (1e-3, 1e3);
/// Default grid: `beta + k / 10` for `k` in `-100..=100`.
pub const GRID_HALF_WIDTH_STEPS: i32 = 100;
pub const GRID_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationMode {
    Temperature(f64),
    AffineBeta(f64),
    Nonlinear { beta_prime: f64, c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    GridSearched,
    Optimized,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::GridSearched => "grid_searched",
            Provenance::Optimized => "optimized",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grid_searched" => Ok(Provenance::GridSearched),
            "optimized" => Ok(Provenance::Optimized),
            other => Err(GsdError::InvalidInput(format!("unknown provenance {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationMethod {
    Grid,
    Optimize,
}

impl CalibrationMethod {
    pub fn name(self) -> &'static str {
        match self {
            CalibrationMethod::Grid => "grid",
            CalibrationMethod::Optimize => "optimize",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(CalibrationMethod::Grid),
            "optimize" => Ok(CalibrationMethod::Optimize),
            other => Err(GsdError::InvalidInput(format!(
                "unknown calibration method {other:?} (expected grid or optimize)"
            ))),
        }
    }

    pub fn provenance(self) -> Provenance {
        match self {
            CalibrationMethod::Grid => Provenance::GridSearched,
            CalibrationMethod::Optimize => Provenance::Optimized,
        }
    }
}

/// A fitted calibration. `mu_x` and `sigma_x` are `None` when they were not
/// computed (temperature scaling).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    pub mu_x: Option<f64>,
    pub sigma_x: Option<f64>,
    pub error: f64,
    pub provenance: Provenance,
}

const KEYS: [&str; 8] = ["mode", "T", "beta_prime", "c", "mu_x", "sigma_x", "error", "provenance"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            CalibrationMode::Temperature(t) => {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(GsdError::InvalidParameter(format!("temperature must be positive, got {t}")));
                }
            }
            CalibrationMode::AffineBeta(b) => {
                if !b.is_finite() {
                    return Err(GsdError::InvalidParameter(format!("beta_prime must be finite, got {b}")));
                }
            }
            CalibrationMode::Nonlinear { beta_prime, c } => {
                if !beta_prime.is_finite() {
                    return Err(GsdError::InvalidParameter(format!(
                        "beta_prime must be finite, got {beta_prime}"
                    )));
                }
                if !(c > 0.0 && c.is_finite()) {
                    return Err(GsdError::InvalidParameter(format!("c must be positive, got {c}")));
                }
                let (mu, sigma) = (self.mu_x.unwrap_or(f64::NAN), self.sigma_x.unwrap_or(f64::NAN));
                if !(mu - sigma > 0.0) {
                    return Err(GsdError::DegenerateStatistics { mu, sigma });
                }
            }
        }
        if !(self.error > 0.0 && self.error < 1.0) {
            return Err(GsdError::InvalidParameter(format!("error must lie in (0, 1), got {}", self.error)));
        }
        Ok(())
    }

    pub fn inference(&self) -> Inference {
        match self.mode {
            CalibrationMode::Temperature(t) => Inference::Temperature(t),
            CalibrationMode::AffineBeta(b) => Inference::Norm(NormMode::AffineOffset(b)),
            CalibrationMode::Nonlinear { beta_prime, c } => Inference::Norm(NormMode::Nonlinear { beta_prime, c }),
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            CalibrationMode::Temperature(_) => "temperature",
            CalibrationMode::AffineBeta(_) => "affine_beta",
            CalibrationMode::Nonlinear { .. } => "nonlinear",
        }
    }

    /// `key=value` lines in a fixed order; inapplicable values are `none`.
    pub fn to_text(&self) -> String {
        let (t, b, c) = match self.mode {
            CalibrationMode::Temperature(t) => (Some(t), None, None),
            CalibrationMode::AffineBeta(b) => (None, Some(b), None),
            CalibrationMode::Nonlinear { beta_prime, c } => (None, Some(beta_prime), Some(c)),
        };
        let mut out = String::new();
        let _ = writeln!(out, "mode={}", self.mode_name());
        let _ = writeln!(out, "T={}", opt(t));
        let _ = writeln!(out, "beta_prime={}", opt(b));
        let _ = writeln!(out, "c={}", opt(c));
        let _ = writeln!(out, "mu_x={}", opt(self.mu_x));
        let _ = writeln!(out, "sigma_x={}", opt(self.sigma_x));
        let _ = writeln!(out, "error={}", self.error);
        let _ = writeln!(out, "provenance={}", self.provenance.name());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut values: [Option<&str>; 8] = [None; 8];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| GsdError::InvalidInput(format!("line {}: expected key=value", lineno + 1)))?;
            let slot = KEYS
                .iter()
                .position(|k| *k == key.trim())
                .ok_or_else(|| GsdError::InvalidInput(format!("line {}: unknown key {:?}", lineno + 1, key.trim())))?;
            if values[slot].is_some() {
                return Err(GsdError::InvalidInput(format!("line {}: duplicate key {:?}", lineno + 1, KEYS[slot])));
            }
            values[slot] = Some(value.trim());
        }
        let get = |i: usize| values[i].ok_or_else(|| GsdError::InvalidInput(format!("missing key {:?}", KEYS[i])));
        let num = |i: usize| -> Result<Option<f64>> {
            match get(i)? {
                "none" => Ok(None),
                s => s
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| GsdError::InvalidInput(format!("key {:?}: not a number: {s:?}", KEYS[i]))),
            }
        };
        let need = |i: usize| -> Result<f64> {
            num(i)?.ok_or_else(|| GsdError::InvalidInput(format!("key {:?} is required for this mode", KEYS[i])))
        };
        let mode = match get(0)? {
            "temperature" => CalibrationMode::Temperature(need(1)?),
            "affine_beta" => CalibrationMode::AffineBeta(need(2)?),
            "nonlinear" => CalibrationMode::Nonlinear {
                beta_prime: need(2)?,
                c: need(3)?,
            },
            other => return Err(GsdError::InvalidInput(format!("unknown mode {other:?}"))),
        };
        let error = need(6)?;
        let config = Self {
            mode,
            mu_x: num(4)?,
            sigma_x: num(5)?,
            error,
            provenance: Provenance::parse(get(7)?)?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn mean_nll(logits: &Matrix, labels: &[u32], t: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter_rows().zip(labels) {
        let scaled: Vec<f64> = row.iter().map(|l| l / t).collect();
        total += log_sum_exp(&scaled) - scaled[y as usize];
    }
    total / labels.len() as f64
}

/// Temperature minimizing the NLL of `softmax(logits / T)`, by gradient
/// descent from `T = 1` with step 0.01, clamped to `(1e-3, 1e3)`.
pub fn fit_temperature(logits: &Matrix, labels: &[u32], iterations: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(GsdError::Empty("labels"));
    }
    if logits.rows() != labels.len() {
        return Err(GsdError::InvalidInput(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= logits.cols()) {
        return Err(GsdError::InvalidInput(format!("label {l} out of range")));
    }
    let mut t = 1.0f64;
    for it in 0..iterations {
        // d/dT [lse(l/T) - l_y/T] = (l_y - E_p[l]) / T^2
        let mut grad = 0.0;
        for (row, &y) in logits.iter_rows().zip(labels) {
            let scaled: Vec<f64> = row.iter().map(|l| l / t).collect();
            let p = softmax(&scaled);
            grad += (row[y as usize] - dot(&p, row)) / (t * t);
        }
        grad /= labels.len() as f64;
        if !grad.is_finite() {
            return Err(GsdError::Divergence(format!("non-finite NLL gradient at iteration {it} (T = {t})")));
        }
        t = (t - TEMPERATURE_LR * grad).clamp(TEMPERATURE_RANGE.0, TEMPERATURE_RANGE.1);
    }
    if !mean_nll(logits, labels, t).is_finite() {
        return Err(GsdError::Divergence(format!("non-finite NLL at T = {t}")));
    }
    Ok(t)
}

/// Per-sample `|dx|` and per-class `|w_j| cos(dphi_j)`; the logits of any
/// affine offset are `N(|dx|) * a_j`.
struct NormFactors {
    norms: Vec<f64>,
    angular: Matrix,
    labels: Vec<u32>,
    alpha: f64,
}

fn gsd_model(model: &Model) -> Result<()> {
    if model.head_kind != HeadKind::Gsd {
        return Err(GsdError::InvalidInput("offset calibration needs a disentangled head".into()));
    }
    Ok(())
}

impl NormFactors {
    fn new(model: &Model, val_set: &EmbeddingBatch) -> Result<Self> {
        gsd_model(model)?;
        if val_set.is_empty() {
            return Err(GsdError::Empty("validation set"));
        }
        let k = model.num_classes();
        let mut norms = Vec::with_capacity(val_set.len());
        let mut angular = Matrix::zeros(val_set.len(), k);
        for i in 0..val_set.len() {
            let z = model.embed(&val_set.row_f64(i));
            let n = norm(&z);
            if n == 0.0 {
                return Err(GsdError::Domain(format!("validation sample {i} has a zero embedding")));
            }
            for (j, w) in model.head.weights.iter_rows().enumerate() {
                let wn = norm(w);
                let c = cosine_from_parts(dot(w, &z), wn, n);
                angular.set(i, j, wn * c);
            }
            norms.push(n);
        }
        Ok(Self {
            norms,
            angular,
            labels: val_set.labels().to_vec(),
            alpha: model.head.alpha,
        })
    }

    fn min_norm(&self) -> f64 {
        self.norms.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn effective(&self, i: usize, beta_prime: f64) -> Result<f64> {
        effective_norm_affine(self.norms[i], &AffineNormParams::new(self.alpha, beta_prime)?)
    }

    fn probs(&self, beta_prime: f64) -> Result<Matrix> {
        let mut probs = Matrix::zeros(self.angular.rows(), self.angular.cols());
        for i in 0..self.angular.rows() {
            let n_eff = self.effective(i, beta_prime)?;
            let logits: Vec<f64> = self.angular.row(i).iter().map(|a| n_eff * a).collect();
            probs.row_mut(i).copy_from_slice(&softmax(&logits));
        }
        Ok(probs)
    }

    /// Mean NLL and its first two derivatives in `beta'`.
    fn nll_derivatives(&self, beta_prime: f64) -> Result<(f64, f64, f64)> {
        let (mut f, mut g, mut h) = (0.0, 0.0, 0.0);
        for i in 0..self.angular.rows() {
            let a = self.angular.row(i);
            let y = self.labels[i] as usize;
            let n_eff = self.effective(i, beta_prime)?;
            let logits: Vec<f64> = a.iter().map(|v| n_eff * v).collect();
            let p = softmax(&logits);
            f += log_sum_exp(&logits) - logits[y];
            let mean_a = dot(&p, a);
            let second = p.iter().zip(a).map(|(pj, aj)| pj * aj * aj).sum::<f64>();
            // dN / dbeta' = 1 / alpha
            g += (mean_a - a[y]) / self.alpha;
            h += (second - mean_a * mean_a) / (self.alpha * self.alpha);
        }
        let n = self.angular.rows() as f64;
        Ok((f / n, g / n, h / n))
    }
}

/// `201` candidates `beta + k / 10`, `k = -100..=100`.
pub fn default_beta_grid(beta: f64) -> Vec<f64> {
    (-GRID_HALF_WIDTH_STEPS..=GRID_HALF_WIDTH_STEPS)
        .map(|k| beta + f64::from(k) * GRID_STEP)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchOutcome {
    pub beta_prime: f64,
    pub ece: f64,
    /// Candidates dropped because some validation sample had `N <= 0`.
    pub excluded: Vec<f64>,
}

/// Grid member with the lowest validation ECE in affine-offset mode; ties go
/// to the smallest value.
pub fn grid_search_beta(
    model: &Model,
    val_set: &EmbeddingBatch,
    grid: &[f64],
    bins: BinningSpec,
) -> Result<GridSearchOutcome> {
    if grid.is_empty() {
        return Err(GsdError::Empty("grid"));
    }
    let factors = NormFactors::new(model, val_set)?;
    let min_norm = factors.min_norm();
    let mut best: Option<(f64, f64)> = None;
    let mut excluded = Vec::new();
    for &b in grid {
        if !b.is_finite() {
            return Err(GsdError::InvalidParameter(format!("grid value {b} is not finite")));
        }
        if (min_norm + b) / factors.alpha <= 0.0 {
            excluded.push(b);
            continue;
        }
        let e = ece(&factors.probs(b)?, val_set.labels(), bins)?;
        let better = match best {
            None => true,
            Some((be, bb)) => e < be || (e == be && b < bb),
        };
        if better {
            best = Some((e, b));
        }
    }
    let (ece, beta_prime) = best.ok_or_else(|| {
        GsdError::InvalidInput("every grid candidate makes some effective norm nonpositive".into())
    })?;
    Ok(GridSearchOutcome {
        beta_prime,
        ece,
        excluded,
    })
}

/// Offset minimizing validation NLL with every other parameter frozen.
///
/// NLL is convex in `beta'`. Each epoch takes one full-batch gradient step
/// scaled by the inverse curvature, halved until the NLL does not increase
/// and every effective norm stays positive.
pub fn optimize_beta_nll(model: &Model, val_set: &EmbeddingBatch, epochs: usize) -> Result<f64> {
    let factors = NormFactors::new(model, val_set)?;
    let floor = -factors.min_norm();
    let mut beta = model.head.beta;
    let (mut f, _, _) = factors.nll_derivatives(beta)?;
    if !f.is_finite() {
        return Err(GsdError::Divergence(format!("non-finite NLL at beta = {beta}")));
    }
    for epoch in 0..epochs {
        let (_, g, h) = factors.nll_derivatives(beta)?;
        if !(g.is_finite() && h.is_finite()) {
            return Err(GsdError::Divergence(format!("non-finite NLL derivative at epoch {epoch}")));
        }
        if g == 0.0 {
            break;
        }
        let mut step = if h > 0.0 { g / h } else { g };
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = beta - step;
            if candidate > floor {
                let (fc, _, _) = factors.nll_derivatives(candidate)?;
                if fc.is_finite() && fc <= f {
                    beta = candidate;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(beta)
}

/// Mean and population standard deviation.
pub fn population_stats(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(GsdError::Empty("values"));
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

/// `(mu_x, sigma_x)` of `|dx|` over the set.
pub fn norm_stats(model: &Model, val_set: &EmbeddingBatch) -> Result<(f64, f64)> {
    if val_set.is_empty() {
        return Err(GsdError::Empty("validation set"));
    }
    let norms: Vec<f64> = (0..val_set.len())
        .map(|i| norm(&model.embed(&val_set.row_f64(i))))
        .collect();
    population_stats(&norms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepOutcome {
    pub affine: CalibrationConfig,
    pub nonlinear: CalibrationConfig,
    /// Grid candidates excluded for nonpositive effective norms.
    pub excluded: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStepOptions {
    pub method: CalibrationMethod,
    pub error: f64,
    pub bins: BinningSpec,
    pub nll_epochs: usize,
}

impl Default for TwoStepOptions {
    fn default() -> Self {
        Self {
            method: CalibrationMethod::Grid,
            error: DEFAULT_ERROR,
            bins: BinningSpec::default(),
            nll_epochs: DEFAULT_NLL_EPOCHS,
        }
    }
}

/// Step 1 tunes the offset on IND validation data; step 2 derives the
/// nonlinear map constant from the norm statistics of the same data.
pub fn calibrate_two_step(model: &Model, val_set: &EmbeddingBatch, opts: TwoStepOptions) -> Result<TwoStepOutcome> {
    gsd_model(model)?;
    let (beta_prime, excluded) = match opts.method {
        CalibrationMethod::Grid => {
            let out = grid_search_beta(model, val_set, &default_beta_grid(model.head.beta), opts.bins)?;
            (out.beta_prime, out.excluded)
        }
        CalibrationMethod::Optimize => (optimize_beta_nll(model, val_set, opts.nll_epochs)?, Vec::new()),
    };
    let (mu, sigma) = norm_stats(model, val_set)?;
    let c = compute_c(mu, sigma, opts.error)?;
    let affine = CalibrationConfig {
        mode: CalibrationMode::AffineBeta(beta_prime),
        mu_x: Some(mu),
        sigma_x: Some(sigma),
        error: opts.error,
        provenance: opts.method.provenance(),
    };
    let nonlinear = CalibrationConfig {
        mode: CalibrationMode::Nonlinear { beta_prime, c },
        ..affine
    };
    nonlinear.validate()?;
    Ok(TwoStepOutcome {
        affine,
        nonlinear,
        excluded,
    })
}

/// Temperature-scaling config for a model, fitted on validation logits.
pub fn calibrate_temperature(model: &Model, val_set: &EmbeddingBatch, iterations: usize) -> Result<CalibrationConfig> {
    let preds = model.predict(val_set, Inference::Plain)?;
    let t = fit_temperature(&preds.logits, val_set.labels(), iterations)?;
    Ok(CalibrationConfig {
        mode: CalibrationMode::Temperature(t),
        mu_x: None,
        sigma_x: None,
        error: DEFAULT_ERROR,
        provenance: Provenance::Optimized,
    })
}
