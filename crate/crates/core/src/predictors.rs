//! Plug-in predictors of a new response and of its noiseless mean, and
//! confidence regions for the new response.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Coefficients, FittedModel};
use crate::linalg::{self, SymMatrix};
use crate::models::{matrix_serde, Matrix};
use crate::special::chi2_upper_quantile;
use crate::transform::{check_k0, variance_bound_term};

/// Condition number of `Σ̂_u` above which regions are flagged degenerate.
pub const DEGENERACY_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionKind {
    Individual,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub point: Vec<f64>,
    pub kind: PredictionKind,
    pub z0: Vec<f64>,
    pub x0: Vec<f64>,
}

fn check_shapes(coefficients: &Coefficients, z0: &[f64], x0: &[f64]) -> Result<()> {
    if z0.len() != coefficients.z_dim() || x0.len() != coefficients.x_dim() {
        return Err(Error::Dimension(format!(
            "fit expects z of length {} and x of length {}, got {} and {}",
            coefficients.z_dim(),
            coefficients.x_dim(),
            z0.len(),
            x0.len()
        )));
    }
    Ok(())
}

/// `ỹ₀`: the fitted observable regression evaluated at `(z₀, x₀)`.
pub fn predict_individual(fit: &FittedModel, z0: &[f64], x0: &[f64]) -> Result<Prediction> {
    check_shapes(&fit.coefficients, z0, x0)?;
    let point = fit.predict(z0, x0);
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("prediction is not finite: {point:?}")));
    }
    Ok(Prediction { point, kind: PredictionKind::Individual, z0: z0.to_vec(), x0: x0.to_vec() })
}

/// `η̃₀ = ỹ₀ − Σ_εδ Σ̂_x⁻¹ (x₀ − μ̂)` with the known cross-covariance
/// `sigma_eps_delta` (d x m).
pub fn predict_mean(fit: &FittedModel, z0: &[f64], x0: &[f64], sigma_eps_delta: &Matrix) -> Result<Prediction> {
    let individual = predict_individual(fit, z0, x0)?;
    let d = individual.point.len();
    let m = x0.len();
    if sigma_eps_delta.shape() != (d, m) {
        return Err(Error::Dimension(format!(
            "cross-covariance must be {d} x {m}, got {} x {}",
            sigma_eps_delta.nrows(),
            sigma_eps_delta.ncols()
        )));
    }
    let sigma_x_inv = linalg::inverse(&SymMatrix::symmetrized(fit.moments.sigma_x_hat.clone())?)?;
    let centred = nalgebra::DVector::from_iterator(m, x0.iter().zip(&fit.moments.mu_hat).map(|(a, b)| a - b));
    let correction = sigma_eps_delta * sigma_x_inv.as_matrix() * centred;
    let point = individual.point.iter().zip(correction.iter()).map(|(y, c)| y - c).collect();
    Ok(Prediction { point, kind: PredictionKind::Mean, ..individual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    /// `‖(Σ̂_u⁺)^{1/2}(h − ỹ₀)‖² ≤ d/α`.
    ChebyshevE,
    /// Same shape with the `χ²_d` upper quantile as threshold.
    ChisquareD,
    /// `|h − ỹ₀| ≤` half-width, for the heteroskedastic quadratic model.
    QuadraticI,
}

impl RegionKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ChebyshevE => "chebyshev-e",
            Self::ChisquareD => "chisquare-d",
            Self::QuadraticI => "quadratic-i",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRegion {
    pub kind: RegionKind,
    pub alpha: f64,
    pub center: Vec<f64>,
    /// `(Σ̂_u⁺)^{1/2}` for the ellipsoids; absent for intervals.
    #[serde(default, with = "matrix_serde::option", skip_serializing_if = "Option::is_none")]
    pub shape: Option<Matrix>,
    /// Bound on the squared standardized distance (ellipsoids) or the
    /// half-width (intervals).
    pub threshold: f64,
    /// Whether the caller asserted a purely normal model (chi-square region).
    pub purely_normal_asserted: bool,
    /// `Σ̂_u` is singular or nearly so; coverage then refers to its range.
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn ellipsoid(fit: &FittedModel, pred: &Prediction, alpha: f64, kind: RegionKind, threshold: f64) -> Result<ConfidenceRegion> {
    let sigma_u = SymMatrix::symmetrized(fit.residual_moment.clone())?;
    if sigma_u.dim() != pred.point.len() {
        return Err(Error::Dimension("prediction and residual covariance dimensions differ".into()));
    }
    let mut warnings = Vec::new();
    let condition = sigma_u.condition_number();
    let degenerate = !(condition <= DEGENERACY_CONDITION);
    if degenerate {
        let msg = format!("residual covariance is near singular (condition number {condition:.3e}); region uses its pseudo-inverse");
        debug!("{msg}");
        warnings.push(msg);
    }
    let shape = linalg::sym_sqrt(&linalg::pinv_default(&sigma_u)?)?.into_matrix();
    Ok(ConfidenceRegion {
        kind,
        alpha,
        center: pred.point.clone(),
        shape: Some(shape),
        threshold,
        purely_normal_asserted: false,
        degenerate,
        warnings,
    })
}

/// Chebyshev-type ellipsoid with threshold `d/α`; asymptotic coverage at
/// least `1 − α` without distributional assumptions on `u`.
pub fn region_chebyshev(fit: &FittedModel, pred: &Prediction, alpha: f64) -> Result<ConfidenceRegion> {
    check_alpha(alpha)?;
    let d = pred.point.len() as f64;
    ellipsoid(fit, pred, alpha, RegionKind::ChebyshevE, d / alpha)
}

/// Ellipsoid with the `χ²_d` upper `α`-quantile as threshold; asymptotically
/// exact when the model is purely normal. `purely_normal` records whether
/// the caller asserts that.
pub fn region_chisquare(fit: &FittedModel, pred: &Prediction, alpha: f64, purely_normal: bool) -> Result<ConfidenceRegion> {
    check_alpha(alpha)?;
    let q = chi2_upper_quantile(pred.point.len(), alpha)?;
    let mut region = ellipsoid(fit, pred, alpha, RegionKind::ChisquareD, q)?;
    region.purely_normal_asserted = purely_normal;
    if !purely_normal {
        region.warnings.push("purely-normal assumption not asserted".into());
    }
    Ok(region)
}

/// Interval for the quadratic model:
/// `|h − ỹ₀| ≤ α^{−1/2} [m̂_{u²} + 4(1/K₀ − 1)σ̂²_x G]₊^{1/2}`.
pub fn region_quadratic(fit: &FittedModel, pred: &Prediction, alpha: f64, k0: f64) -> Result<ConfidenceRegion> {
    check_alpha(alpha)?;
    check_k0(k0)?;
    let Coefficients::Polynomial { z_coef, beta, .. } = &fit.coefficients else {
        return Err(Error::InvalidInput("quadratic region needs a degree-2 polynomial fit".into()));
    };
    if beta.len() != 2 || !z_coef.is_empty() {
        return Err(Error::InvalidInput("quadratic region needs a degree-2 polynomial fit without z".into()));
    }
    let x0 = pred.x0[0];
    let mu = fit.moments.mu_hat[0];
    let sigma_x2 = fit.moments.sigma_x_hat[(0, 0)];
    let m_u2 = fit.residual_moment[(0, 0)];
    let g = variance_bound_term(x0, mu, sigma_x2, beta[0], beta[1], k0)?;
    let bracket = m_u2 + 4.0 * (1.0 / k0 - 1.0) * sigma_x2 * g;
    let mut warnings = Vec::new();
    if bracket <= 0.0 {
        let msg = format!("variance bound {bracket:.6e} is not positive; interval has zero width");
        debug!("{msg}");
        warnings.push(msg);
    }
    Ok(ConfidenceRegion {
        kind: RegionKind::QuadraticI,
        alpha,
        center: pred.point.clone(),
        shape: None,
        threshold: bracket.max(0.0).sqrt() / alpha.sqrt(),
        purely_normal_asserted: false,
        degenerate: bracket <= 0.0,
        warnings,
    })
}

/// Squared standardized distance for ellipsoids, absolute deviation for
/// intervals.
pub fn region_statistic(region: &ConfidenceRegion, h: &[f64]) -> Result<f64> {
    if h.len() != region.center.len() {
        return Err(Error::Dimension(format!("region has dimension {}, point has {}", region.center.len(), h.len())));
    }
    let diff: Vec<f64> = h.iter().zip(&region.center).map(|(a, b)| a - b).collect();
    Ok(match &region.shape {
        Some(shape) => {
            let v = shape * nalgebra::DVector::from_column_slice(&diff);
            v.norm_squared()
        }
        None => diff[0].abs(),
    })
}

pub fn region_contains(region: &ConfidenceRegion, h: &[f64]) -> Result<bool> {
    Ok(region_statistic(region, h)? <= region.threshold)
}
