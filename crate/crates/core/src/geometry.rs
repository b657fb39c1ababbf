//! Closed-form norm/angle decomposition of a softmax-linear logit.
//!
//! A logit `<w, x>` factors as `|w| |x| cos(phi)`. Splitting the feature norm
//! into an instance-dependent part and a constant offset
//! (`|x| = |dx| + c_x`), and the angle into an instance-dependent part minus a
//! constant relaxation angle (`phi = dphi - c_phi`), gives an exact expansion
//! of the logit. Under a small composed angle that expansion collapses to
//! `(|dx| / alpha + beta / alpha) cos(dphi)` with `alpha = cos(c_phi)` and
//! `beta = c_x`, which is the effective-norm form used by the GSD head.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{GsdError, Result};
use crate::linalg::{dot, norm};

/// Norm/cosine factorization of a single logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricLogit {
    pub w_norm: f64,
    pub x_norm: f64,
    pub cos_phi: f64,
    pub logit: f64,
}

/// Factors `<w, x>` into `|w| |x| cos(phi)`.
///
/// Zero-norm inputs are rejected: their angle is undefined and mapping it to
/// orthogonality would hide the problem from downstream calibration.
pub fn geometric_logit(w: &[f64], x: &[f64]) -> Result<GeometricLogit> {
    if w.is_empty() || w.len() != x.len() {
        return Err(GsdError::InvalidInput(format!(
            "vectors must have equal nonzero dimension, got {} and {}",
            w.len(),
            x.len()
        )));
    }
    let w_norm = norm(w);
    let x_norm = norm(x);
    if w_norm == 0.0 || x_norm == 0.0 {
        return Err(GsdError::Domain("cosine undefined for a zero-norm vector".into()));
    }
    let cos_phi = cosine_from_parts(dot(w, x), w_norm, x_norm);
    Ok(GeometricLogit {
        w_norm,
        x_norm,
        cos_phi,
        logit: w_norm * x_norm * cos_phi,
    })
}

#[inline]
pub(crate) fn cosine_from_parts(dot: f64, a_norm: f64, b_norm: f64) -> f64 {
    (dot / (a_norm * b_norm)).clamp(-1.0, 1.0)
}

/// Inputs to the decomposed logit: the two norm parts and the two angle parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionInputs {
    delta_norm: f64,
    c_x: f64,
    delta_phi: f64,
    c_phi: f64,
}

impl DecompositionInputs {
    /// Angles enter through their absolute value (cosine is even), so negative
    /// radians are folded onto `[0, pi]` here.
    pub fn new(delta_norm: f64, c_x: f64, delta_phi: f64, c_phi: f64) -> Result<Self> {
        let delta_phi = delta_phi.abs();
        let c_phi = c_phi.abs();
        if !(delta_norm >= 0.0 && delta_norm.is_finite()) {
            return Err(GsdError::InvalidParameter(format!(
                "delta_norm must be finite and nonnegative, got {delta_norm}"
            )));
        }
        if !(c_x >= 0.0 && c_x.is_finite()) {
            return Err(GsdError::InvalidParameter(format!(
                "c_x must be finite and nonnegative, got {c_x}"
            )));
        }
        if delta_phi > PI {
            return Err(GsdError::InvalidParameter(format!(
                "delta_phi must lie in [0, pi], got {delta_phi}"
            )));
        }
        if !(c_phi < FRAC_PI_2) {
            return Err(GsdError::InvalidParameter(format!(
                "c_phi must lie in [0, pi/2), got {c_phi}"
            )));
        }
        Ok(Self {
            delta_norm,
            c_x,
            delta_phi,
            c_phi,
        })
    }

    pub fn delta_norm(&self) -> f64 {
        self.delta_norm
    }

    pub fn c_x(&self) -> f64 {
        self.c_x
    }

    pub fn delta_phi(&self) -> f64 {
        self.delta_phi
    }

    pub fn c_phi(&self) -> f64 {
        self.c_phi
    }

    /// `|x| = |dx| + c_x`.
    pub fn full_norm(&self) -> f64 {
        self.delta_norm + self.c_x
    }

    /// `phi = dphi - c_phi`.
    pub fn composed_angle(&self) -> f64 {
        self.delta_phi - self.c_phi
    }
}

/// Which algebraic rearrangement to evaluate on the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpansionForm {
    /// Angle-addition form `(cos dphi cos c_phi + sin dphi sin c_phi)`.
    PreRatio,
    /// Final form with the ratio term, singular at `c_phi = 0`.
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expansion {
    pub lhs: f64,
    pub rhs: f64,
    pub form: ExpansionForm,
}

/// Evaluates the decomposed logit both directly and through its expansion.
/// Uses the ratio form whenever `c_phi > 0` and falls back to the pre-ratio
/// form at `c_phi = 0`.
pub fn exact_expansion(d: &DecompositionInputs) -> Expansion {
    let form = if d.c_phi > 0.0 {
        ExpansionForm::Ratio
    } else {
        ExpansionForm::PreRatio
    };
    // the only failure is Ratio at c_phi = 0, excluded above
    exact_expansion_with(d, form).expect("form chosen to be non-singular")
}

pub fn exact_expansion_with(d: &DecompositionInputs, form: ExpansionForm) -> Result<Expansion> {
    let norm = d.full_norm();
    let lhs = norm * d.composed_angle().cos();
    let (sin_dp, cos_dp) = d.delta_phi.sin_cos();
    let (sin_cp, cos_cp) = d.c_phi.sin_cos();
    let rhs = match form {
        ExpansionForm::PreRatio => norm * (cos_dp * cos_cp + sin_dp * sin_cp),
        ExpansionForm::Ratio => {
            if d.c_phi == 0.0 {
                return Err(GsdError::DegenerateAngle);
            }
            let ratio = (cos_cp * sin_dp) / (sin_cp * cos_dp);
            norm / cos_cp * cos_dp * (1.0 - sin_cp * sin_cp * (1.0 - ratio))
        }
    };
    Ok(Expansion { lhs, rhs, form })
}

/// `cos(c_phi) sin(dphi) / (sin(c_phi) cos(dphi))`, the factor assumed close
/// to one when the composed angle is small. Requires `0 < c_phi < dphi < pi/2`.
pub fn small_angle_ratio(delta_phi: f64, c_phi: f64) -> Result<f64> {
    if c_phi == 0.0 {
        return Err(GsdError::DegenerateAngle);
    }
    if !(c_phi > 0.0 && c_phi < delta_phi && delta_phi < FRAC_PI_2) {
        return Err(GsdError::InvalidParameter(format!(
            "need 0 < c_phi < delta_phi < pi/2, got c_phi={c_phi}, delta_phi={delta_phi}"
        )));
    }
    Ok((c_phi.cos() * delta_phi.sin()) / (c_phi.sin() * delta_phi.cos()))
}

/// Same quantity written through the composed angle:
/// `(sin(dphi + c_phi) + sin(phi)) / (sin(dphi + c_phi) - sin(phi))`.
pub fn small_angle_ratio_sum_form(delta_phi: f64, c_phi: f64) -> Result<f64> {
    // validates the same domain
    small_angle_ratio(delta_phi, c_phi)?;
    let s = (delta_phi + c_phi).sin();
    let p = (delta_phi - c_phi).sin();
    Ok((s + p) / (s - p))
}

/// Small-angle approximation `(|dx| + c_x) cos(dphi) / cos(c_phi)`.
pub fn approx_logit(d: &DecompositionInputs) -> f64 {
    d.full_norm() * d.delta_phi.cos() / d.c_phi.cos()
}

/// `alpha = cos(c_phi)`, `beta = c_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineNormParams {
    pub alpha: f64,
    pub beta: f64,
}

impl AffineNormParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !beta.is_finite() {
            return Err(GsdError::InvalidParameter(format!("beta must be finite, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    /// Geometric parameters from the instance-independent parts.
    pub fn from_decomposition(c_x: f64, c_phi: f64) -> Result<Self> {
        Self::new(c_phi.cos(), c_x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearMapParams {
    pub alpha: f64,
    pub beta_prime: f64,
    pub c: f64,
}

impl NonlinearMapParams {
    pub fn new(alpha: f64, beta_prime: f64, c: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !beta_prime.is_finite() {
            return Err(GsdError::InvalidParameter(format!(
                "beta_prime must be finite, got {beta_prime}"
            )));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(GsdError::InvalidParameter(format!("c must be positive, got {c}")));
        }
        Ok(Self { alpha, beta_prime, c })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(GsdError::InvalidParameter(format!("alpha must be positive, got {alpha}")))
    }
}

/// `|dx| / alpha + beta / alpha`.
pub fn effective_norm_affine(delta_norm: f64, p: &AffineNormParams) -> Result<f64> {
    check_alpha(p.alpha)?;
    Ok(delta_norm / p.alpha + p.beta / p.alpha)
}

/// `|dx| / alpha + (beta' / alpha) (1 - exp(-c |dx|))`.
///
/// Near the origin the offset is switched off; for large norms the map
/// approaches the affine one with offset `beta'` at rate `exp(-c |dx|)`.
pub fn effective_norm_nonlinear(delta_norm: f64, p: &NonlinearMapParams) -> Result<f64> {
    check_alpha(p.alpha)?;
    if !(p.c > 0.0) {
        return Err(GsdError::InvalidParameter(format!("c must be positive, got {}", p.c)));
    }
    Ok(delta_norm / p.alpha + p.beta_prime / p.alpha * (-(-p.c * delta_norm).exp_m1()))
}

/// Decay constant of the nonlinear map:
/// `c = -ln(1 - error) / (mu - sigma)`, so that `exp(-c (mu - sigma)) = 1 - error`.
pub fn compute_c(mu: f64, sigma: f64, error: f64) -> Result<f64> {
    let gap = mu - sigma;
    if !(gap > 0.0) || !gap.is_finite() {
        return Err(GsdError::DegenerateStatistics { mu, sigma });
    }
    if !(error > 0.0 && error < 1.0) {
        return Err(GsdError::InvalidParameter(format!(
            "error must lie in (0, 1), got {error}"
        )));
    }
    Ok(-(-error).ln_1p() / gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn geometric_logit_examples() {
        let g = geometric_logit(&[1.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!((g.w_norm, g.x_norm, g.cos_phi, g.logit), (1.0, 5.0, 0.6, 3.0));
        let g = geometric_logit(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!((g.w_norm, g.x_norm, g.cos_phi, g.logit), (1.0, 1.0, 1.0, 1.0));
        let g = geometric_logit(&[1.0, 0.0], &[0.0, 2.0]).unwrap();
        assert_eq!((g.w_norm, g.x_norm, g.cos_phi, g.logit), (1.0, 2.0, 0.0, 0.0));
    }

    #[test]
    fn geometric_logit_rejects_zero_norm() {
        assert!(matches!(
            geometric_logit(&[0.0, 0.0], &[1.0, 2.0]),
            Err(GsdError::Domain(_))
        ));
        assert!(matches!(
            geometric_logit(&[1.0, 0.0], &[0.0, 0.0]),
            Err(GsdError::Domain(_))
        ));
        assert!(geometric_logit(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn expansion_examples() {
        let d = DecompositionInputs::new(2.0, 1.0, 0.3, 0.1).unwrap();
        let e = exact_expansion(&d);
        assert_eq!(e.form, ExpansionForm::Ratio);
        // 3 cos(0.2), 40-digit reference
        assert!(close(e.lhs, 2.940_199_733_523_725, 1e-14));
        assert!(close(e.rhs, e.lhs, 1e-12));

        let d = DecompositionInputs::new(0.0, 1.0, 0.4, 0.4).unwrap();
        let e = exact_expansion(&d);
        assert_eq!(e.lhs, 1.0);
        assert!(close(e.rhs, 1.0, 1e-12));
    }

    #[test]
    fn zero_relaxation_angle_uses_pre_ratio_form() {
        let d = DecompositionInputs::new(2.0, 1.0, 0.3, 0.0).unwrap();
        assert!(matches!(
            exact_expansion_with(&d, ExpansionForm::Ratio),
            Err(GsdError::DegenerateAngle)
        ));
        let e = exact_expansion(&d);
        assert_eq!(e.form, ExpansionForm::PreRatio);
        assert!(close(e.rhs, 3.0 * 0.3f64.cos(), 1e-15));
    }

    #[test]
    fn negative_angles_fold_to_absolute_value() {
        let d = DecompositionInputs::new(1.0, 0.0, -0.3, -0.1).unwrap();
        assert_eq!(d.delta_phi(), 0.3);
        assert_eq!(d.c_phi(), 0.1);
        assert!(DecompositionInputs::new(-1.0, 0.0, 0.3, 0.1).is_err());
        assert!(DecompositionInputs::new(1.0, 0.0, 0.3, FRAC_PI_2).is_err());
        assert!(DecompositionInputs::new(1.0, 0.0, 3.5, 0.1).is_err());
    }

    #[test]
    fn small_angle_ratio_examples() {
        let r = small_angle_ratio(0.11, 0.1).unwrap();
        assert!(close(r, 1.100_774_261_642_862, 1e-12));
        let alt = small_angle_ratio_sum_form(0.11, 0.1).unwrap();
        assert!(close(alt, r, 1e-12));

        let r = small_angle_ratio(0.3, 0.1).unwrap();
        let alt = small_angle_ratio_sum_form(0.3, 0.1).unwrap();
        assert!(close(r, 3.083_044_407_083_679, 1e-12));
        assert!(close(alt, r, 1e-12));

        let r = small_angle_ratio(0.1 + 1e-9, 0.1).unwrap();
        assert!((r - 1.0).abs() < 1e-7);

        assert!(matches!(small_angle_ratio(0.3, 0.0), Err(GsdError::DegenerateAngle)));
        assert!(small_angle_ratio(0.1, 0.3).is_err());
    }

    #[test]
    fn approx_logit_examples() {
        let d = DecompositionInputs::new(2.0, 1.0, 0.11, 0.1).unwrap();
        let a = approx_logit(&d);
        let exact = exact_expansion(&d).lhs;
        assert!(close(a, 2.996_840_011_254_518, 1e-13));
        assert!(close(exact, 2.999_850_001_249_996, 1e-13));
        assert!(((a - exact) / exact).abs() < 0.0011);

        let d = DecompositionInputs::new(2.0, 1.0, 0.3, 0.1).unwrap();
        assert!(close(approx_logit(&d), 2.880_399_467_047_45, 1e-13));

        for phi in [0.0, 0.2, 0.7, 1.3] {
            let d = DecompositionInputs::new(1.7, 0.4, phi, phi.min(1.5)).unwrap();
            let exact = exact_expansion(&d).lhs;
            // cos(0) = 1 makes the two forms agree up to rounding of cos/cos
            assert!(close(approx_logit(&d), exact, 1e-15), "phi {phi}");
        }
    }

    #[test]
    fn effective_norm_examples() {
        let p = AffineNormParams::new(1.0, 2.0).unwrap();
        assert_eq!(effective_norm_affine(5.0, &p).unwrap(), 7.0);
        let p = AffineNormParams::new(1.0, 0.0).unwrap();
        assert_eq!(effective_norm_affine(4.25, &p).unwrap(), 4.25);
        let p = AffineNormParams::new(2.0, 3.0).unwrap();
        assert_eq!(effective_norm_affine(0.0, &p).unwrap(), 1.5);
        assert!(AffineNormParams::new(0.0, 1.0).is_err());
        let bad = AffineNormParams { alpha: -1.0, beta: 0.0 };
        assert!(effective_norm_affine(1.0, &bad).is_err());

        let c = -(0.9f64.ln());
        let p = NonlinearMapParams::new(1.0, 2.0, c).unwrap();
        assert_eq!(effective_norm_nonlinear(0.0, &p).unwrap(), 0.0);
        assert!(close(effective_norm_nonlinear(1.0, &p).unwrap(), 1.2, 1e-14));
        let far = effective_norm_nonlinear(100.0, &p).unwrap();
        assert!((far - 102.0).abs() < 1e-4);
        assert!(NonlinearMapParams::new(1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn compute_c_examples() {
        let c = compute_c(2.0, 1.0, 0.1).unwrap();
        assert!(close(c, 0.105_360_515_657_826_3, 1e-15));
        assert!(compute_c(2.0, 1.0, 1e-12).unwrap() < 1e-11);
        assert!(matches!(
            compute_c(1.0, 1.0, 0.1),
            Err(GsdError::DegenerateStatistics { .. })
        ));
        assert!(compute_c(2.0, 1.0, 1.0).is_err());
    }
}
