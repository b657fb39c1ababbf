use crate::error::{GsdError, Result};
use crate::geometry::{cosine_from_parts, effective_norm_affine, effective_norm_nonlinear, AffineNormParams, NonlinearMapParams};
use crate::linalg::{dot, norm, Matrix};
use crate::rng::GsdRng;

/// Class-weight matrix (rows are class vectors) plus the trainable scalars
/// `alpha` and `beta` of the disentangled head.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricHead {
    pub weights: Matrix,
    pub alpha: f64,
    pub beta: f64,
}

impl GeometricHead {
    /// `alpha = 1`, `beta = 0`: starts out identical to the plain linear head.
    pub fn new(weights: Matrix) -> Result<Self> {
        Self::with_scalars(weights, 1.0, 0.0)
    }

    pub fn with_scalars(weights: Matrix, alpha: f64, beta: f64) -> Result<Self> {
        let head = Self { weights, alpha, beta };
        head.validate()?;
        Ok(head)
    }

    pub fn init(num_classes: usize, feature_dim: usize, rng: &mut GsdRng) -> Self {
        let bound = 1.0 / (feature_dim as f64).sqrt();
        let mut weights = Matrix::zeros(num_classes, feature_dim);
        for w in weights.as_mut_slice() {
            *w = rng.uniform_range(-bound, bound);
        }
        Self {
            weights,
            alpha: 1.0,
            beta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.rows() == 0 || self.weights.cols() == 0 {
            return Err(GsdError::InvalidInput("head needs at least one class and one feature".into()));
        }
        if let Some(j) = self.weights.iter_rows().position(|r| norm(r) == 0.0) {
            return Err(GsdError::InvalidInput(format!("class weight row {j} has zero norm")));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(GsdError::InvalidParameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !self.beta.is_finite() {
            return Err(GsdError::InvalidParameter(format!("beta must be finite, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Which effective norm the disentangled head uses at inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormMode {
    /// Trained affine map `|dx| / alpha + beta / alpha`.
    Affine,
    /// Affine map with a tuned offset `beta'`.
    AffineOffset(f64),
    /// `|dx| / alpha + (beta' / alpha)(1 - exp(-c |dx|))`.
    Nonlinear { beta_prime: f64, c: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsdForward {
    pub logits: Vec<f64>,
    /// `|dx|` as reported (true Euclidean norm).
    pub delta_norm: f64,
    pub effective_norm: f64,
    /// `cos(dphi_j)` per class.
    pub cosines: Vec<f64>,
}

impl GsdForward {
    /// A nonpositive effective norm flips or flattens the logits, so argmax is
    /// no longer guaranteed to match the uncalibrated head.
    pub fn norm_warning(&self) -> bool {
        self.effective_norm <= 0.0
    }
}

fn check_input(weights: &Matrix, x: &[f64]) -> Result<f64> {
    if x.len() != weights.cols() {
        return Err(GsdError::InvalidInput(format!(
            "feature has dimension {}, head expects {}",
            x.len(),
            weights.cols()
        )));
    }
    let x_norm = norm(x);
    if x_norm == 0.0 {
        return Err(GsdError::Domain("cosine undefined for a zero-norm feature".into()));
    }
    Ok(x_norm)
}

/// Per-class `(|w_j|, cos phi_j)`.
fn norms_and_cosines(weights: &Matrix, x: &[f64], x_norm: f64) -> (Vec<f64>, Vec<f64>) {
    weights
        .iter_rows()
        .map(|w| {
            let w_norm = norm(w);
            (w_norm, cosine_from_parts(dot(w, x), w_norm, x_norm))
        })
        .unzip()
}

/// `logits_j = |w_j| |x| cos(phi_j)`.
pub fn forward_vanilla(weights: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    let x_norm = check_input(weights, x)?;
    let (w_norms, cosines) = norms_and_cosines(weights, x, x_norm);
    Ok(w_norms.iter().zip(&cosines).map(|(w, c)| x_norm * (w * c)).collect())
}

/// `logits_j = |w_j| N(|dx|) cos(dphi_j)` with `N` chosen by `mode`.
pub fn forward_gsd(head: &GeometricHead, delta_x: &[f64], mode: NormMode) -> Result<GsdForward> {
    head.validate()?;
    let delta_norm = check_input(&head.weights, delta_x)?;
    let effective_norm = match mode {
        NormMode::Affine => effective_norm_affine(delta_norm, &AffineNormParams::new(head.alpha, head.beta)?)?,
        NormMode::AffineOffset(beta_prime) => {
            effective_norm_affine(delta_norm, &AffineNormParams::new(head.alpha, beta_prime)?)?
        }
        NormMode::Nonlinear { beta_prime, c } => {
            effective_norm_nonlinear(delta_norm, &NonlinearMapParams::new(head.alpha, beta_prime, c)?)?
        }
    };
    let (w_norms, cosines) = norms_and_cosines(&head.weights, delta_x, delta_norm);
    let logits = w_norms
        .iter()
        .zip(&cosines)
        .map(|(w, c)| effective_norm * (w * c))
        .collect();
    Ok(GsdForward {
        logits,
        delta_norm,
        effective_norm,
        cosines,
    })
}

/// Inference variants that divide out one or both norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    Vanilla,
    NoWeightNorm,
    NoXNorm,
    OnlyCosine,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Vanilla,
        AblationVariant::NoWeightNorm,
        AblationVariant::NoXNorm,
        AblationVariant::OnlyCosine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Vanilla => "vanilla",
            AblationVariant::NoWeightNorm => "no_weight_norm",
            AblationVariant::NoXNorm => "no_x_norm",
            AblationVariant::OnlyCosine => "only_cosine",
        }
    }
}

pub fn forward_ablation(weights: &Matrix, x: &[f64], variant: AblationVariant) -> Result<Vec<f64>> {
    let x_norm = check_input(weights, x)?;
    let (w_norms, cosines) = norms_and_cosines(weights, x, x_norm);
    Ok(w_norms
        .iter()
        .zip(&cosines)
        .map(|(&w, &c)| match variant {
            AblationVariant::Vanilla => x_norm * (w * c),
            AblationVariant::NoWeightNorm => x_norm * c,
            AblationVariant::NoXNorm => w * c,
            AblationVariant::OnlyCosine => c,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{argmax, softmax};

    fn eye2() -> Matrix {
        Matrix::identity(2)
    }

    #[test]
    fn vanilla_examples() {
        assert_eq!(forward_vanilla(&eye2(), &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let w = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        assert_eq!(argmax(&forward_vanilla(&w, &[2.0, 0.0, 5.0]).unwrap()), 0);
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert!(matches!(forward_vanilla(&eye2(), &[0.0, 0.0]), Err(GsdError::Domain(_))));
    }

    #[test]
    fn gsd_examples() {
        let head = GeometricHead::new(eye2()).unwrap();
        let out = forward_gsd(&head, &[3.0, 4.0], NormMode::Affine).unwrap();
        assert_eq!(out.logits, forward_vanilla(&eye2(), &[3.0, 4.0]).unwrap());

        let head = GeometricHead::with_scalars(eye2(), 1.0, 2.0).unwrap();
        let out = forward_gsd(&head, &[3.0, 4.0], NormMode::Affine).unwrap();
        assert_eq!(out.effective_norm, 7.0);
        assert!((out.logits[0] - 4.2).abs() < 1e-15);
        assert!((out.logits[1] - 5.6).abs() < 1e-15);

        let w = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.5]]);
        let head = GeometricHead::new(w).unwrap();
        let c = -(0.9f64.ln());
        let x = [0.6, 0.8];
        let out = forward_gsd(&head, &x, NormMode::Nonlinear { beta_prime: 2.0, c }).unwrap();
        assert!((out.effective_norm - 1.2).abs() < 1e-14);
        assert!((out.logits[0] - 1.2 * 0.6 * 2.0).abs() < 1e-14);
        assert!((out.logits[1] - 1.2 * 0.8 * 0.5).abs() < 1e-14);
    }

    #[test]
    fn negative_effective_norm_is_flagged() {
        let head = GeometricHead::new(eye2()).unwrap();
        let out = forward_gsd(&head, &[3.0, 4.0], NormMode::AffineOffset(-6.0)).unwrap();
        assert!(out.norm_warning());
        let out = forward_gsd(&head, &[3.0, 4.0], NormMode::AffineOffset(-4.0)).unwrap();
        assert!(!out.norm_warning());
    }

    #[test]
    fn invalid_heads_rejected() {
        assert!(GeometricHead::new(Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]])).is_err());
        assert!(GeometricHead::with_scalars(eye2(), 0.0, 0.0).is_err());
        let bad = GeometricHead {
            weights: eye2(),
            alpha: -1.0,
            beta: 0.0,
        };
        assert!(forward_gsd(&bad, &[1.0, 1.0], NormMode::Affine).is_err());
    }

    #[test]
    fn ablation_examples() {
        let out = forward_ablation(&eye2(), &[3.0, 4.0], AblationVariant::OnlyCosine).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-15 && (out[1] - 0.8).abs() < 1e-15);
        let a = forward_ablation(&eye2(), &[3.0, 4.0], AblationVariant::NoXNorm).unwrap();
        assert_eq!(a, out);

        // equal row norms: a common positive factor, so argmax agrees
        let w = Matrix::from_rows(&[vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 2.0]]);
        let x = [0.3, -1.2, 0.9];
        let picks: Vec<usize> = AblationVariant::ALL
            .iter()
            .map(|&v| argmax(&forward_ablation(&w, &x, v).unwrap()))
            .collect();
        assert!(picks.iter().all(|&p| p == picks[0]));
    }
}
