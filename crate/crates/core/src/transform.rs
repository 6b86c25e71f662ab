//! Exact maps from latent regression parameters to the parameters of the
//! regression of `y` on the observables `(z, x)`.
//!
//! Conditioning the jointly Gaussian `(ξ, ε)` on `x` gives
//! `ξ = Σ_δΣ_x⁻¹μ + Σ_ξΣ_x⁻¹x + γ₁` and `ε = Σ_εδΣ_x⁻¹(x − μ) + γ₂` with
//! `(γ₁, γ₂) ~ N(0, V)` independent of `x`. Substituting into each family's
//! regression function and integrating out `(γ₁, γ₂)` yields `E[y | z, x]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::models::{eval_power_series, eval_trig, matrix_serde, Family, Matrix, ModelSpec};
use crate::special::abs_normal_mean;

/// Conditional law of `(ξ, ε)` given `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    /// `Σ_ξ Σ_x⁻¹` (m x m).
    pub coeff_xi: Matrix,
    /// `Σ_δ Σ_x⁻¹ μ`.
    pub offset_xi: Vec<f64>,
    /// `Σ_εδ Σ_x⁻¹` (d x m).
    pub coeff_eps: Matrix,
    /// Conditional covariance of `(ξ, ε)`, ordered `ξ` first ((m+d) x (m+d)).
    pub v12: Matrix,
    pub mu: Vec<f64>,
}

impl ConditionalGaussian {
    /// `E[ξ | x]`.
    pub fn mean_xi(&self, x: &[f64]) -> Vec<f64> {
        let m = self.offset_xi.len();
        (0..m)
            .map(|i| self.offset_xi[i] + (0..m).map(|j| self.coeff_xi[(i, j)] * x[j]).sum::<f64>())
            .collect()
    }

    /// `E[ε | x]`.
    pub fn mean_eps(&self, x: &[f64]) -> Vec<f64> {
        let (d, m) = (self.coeff_eps.nrows(), self.coeff_eps.ncols());
        (0..d)
            .map(|i| (0..m).map(|j| self.coeff_eps[(i, j)] * (x[j] - self.mu[j])).sum())
            .collect()
    }

    /// `Cov(γ₁)`.
    pub fn var_xi(&self) -> Matrix {
        let m = self.offset_xi.len();
        self.v12.view((0, 0), (m, m)).into_owned()
    }
}

/// `Σ₁₁ − Σ₁₂Σ₂₂⁻¹Σ₁₂ᵀ` and the regression coefficients of `(ξ, ε)` on `x`.
pub fn condition_gaussian(spec: &ModelSpec) -> Result<ConditionalGaussian> {
    let m = spec.latent_dim();
    let d = spec.response_dim();
    let sigma_x = SymMatrix::symmetrized(spec.sigma_x())?;
    let sx_inv = linalg::inverse(&sigma_x)?.into_matrix();
    let sigma_xi = &spec.xi_cov;
    let sigma_eps_delta = spec.sigma_eps_delta();

    let mut s11 = Matrix::zeros(m + d, m + d);
    s11.view_mut((0, 0), (m, m)).copy_from(sigma_xi);
    s11.view_mut((m, m), (d, d)).copy_from(&spec.sigma_eps());
    let mut s12 = Matrix::zeros(m + d, m);
    s12.view_mut((0, 0), (m, m)).copy_from(sigma_xi);
    s12.view_mut((m, 0), (d, m)).copy_from(&sigma_eps_delta);
    let v = &s11 - &s12 * &sx_inv * s12.transpose();
    let v12 = (&v + v.transpose()) * 0.5;

    let mu = nalgebra::DVector::from_column_slice(&spec.xi_mean);
    let offset = spec.sigma_delta() * &sx_inv * &mu;
    Ok(ConditionalGaussian {
        coeff_xi: sigma_xi * &sx_inv,
        offset_xi: offset.iter().copied().collect(),
        coeff_eps: &sigma_eps_delta * &sx_inv,
        v12,
        mu: spec.xi_mean.clone(),
    })
}

/// Parameters of `E[y | z, x]`, one variant per model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum TransformedParams {
    /// `E[y|z,x] = b_x + Cᵀz + B_xᵀx`, residual covariance `Σ_u`.
    LinearMv {
        intercept: Vec<f64>,
        #[serde(with = "matrix_serde")]
        z_coef: Matrix,
        #[serde(with = "matrix_serde")]
        x_coef: Matrix,
        #[serde(with = "matrix_serde")]
        sigma_u: Matrix,
    },
    /// `E[y|z,x] = cᵀz + β₀ₓ + Σ βⱼₓ xʲ`.
    Polynomial {
        z_coef: Vec<f64>,
        beta0_x: f64,
        beta_x: Vec<f64>,
        /// `a = σ²_δ μ / σ²_x`, so that `E[ξ|x] = a + Kx`.
        shift: f64,
        reliability: f64,
        /// `Var(γ₁) = Kσ²_δ`.
        gamma_var: f64,
        /// `f = σ_εδ / σ²_x`.
        eps_slope: f64,
    },
    Quadratic {
        beta0_x: f64,
        beta1_x: f64,
        beta2_x: f64,
        reliability: f64,
        gamma_var: f64,
        mu: f64,
        sigma_x2: f64,
        /// `E[Var(u | x)]`.
        m_u2: f64,
    },
    /// `E[y|x] = β_x exp(λ_x x)`.
    Exponential { beta_x: f64, lambda_x: f64, reliability: f64 },
    /// `E[y|x] = a₀ + Σ (Aₖ cos kω_x x + Bₖ sin kω_x x)`.
    Trigonometric {
        a0: f64,
        cos_coef_x: Vec<f64>,
        sin_coef_x: Vec<f64>,
        omega_x: f64,
        /// `exp(−k²ω²Kσ²_δ/2)` per harmonic.
        damping: Vec<f64>,
        /// `ω(1 − K)μ`; harmonic `k` is shifted by `k` times this.
        phase: f64,
    },
    /// `E[y|x] = β_x F(k_x x + b_x)` with `F(a) = E|g + a|`.
    AbsoluteValue { beta_x: f64, k_x: f64, b_x: f64 },
}

impl TransformedParams {
    /// The best predictor `E[y | z, x]`.
    pub fn mean_response(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        match self {
            Self::LinearMv { intercept, z_coef, x_coef, .. } => {
                let mut out = intercept.clone();
                for (j, o) in out.iter_mut().enumerate() {
                    if z_coef.nrows() > 0 {
                        *o += z.iter().enumerate().map(|(i, v)| z_coef[(i, j)] * v).sum::<f64>();
                    }
                    *o += x.iter().enumerate().map(|(i, v)| x_coef[(i, j)] * v).sum::<f64>();
                }
                out
            }
            Self::Polynomial { z_coef, beta0_x, beta_x, .. } => {
                let zc: f64 = z_coef.iter().zip(z).map(|(c, v)| c * v).sum();
                vec![zc + beta0_x + eval_power_series(beta_x, x[0])]
            }
            Self::Quadratic { beta0_x, beta1_x, beta2_x, .. } => {
                vec![beta0_x + beta1_x * x[0] + beta2_x * x[0] * x[0]]
            }
            Self::Exponential { beta_x, lambda_x, .. } => vec![beta_x * (lambda_x * x[0]).exp()],
            Self::Trigonometric { a0, cos_coef_x, sin_coef_x, omega_x, .. } => {
                vec![eval_trig(*a0, cos_coef_x, sin_coef_x, *omega_x, x[0], 0.0)]
            }
            Self::AbsoluteValue { beta_x, k_x, b_x } => vec![beta_x * abs_normal_mean(k_x * x[0] + b_x)],
        }
    }

    /// Slope-type coefficients, in the same order as
    /// [`crate::estimators::Coefficients::slope_vector`].
    pub fn slope_vector(&self) -> Vec<f64> {
        match self {
            Self::LinearMv { z_coef, x_coef, .. } => z_coef.iter().chain(x_coef.iter()).copied().collect(),
            Self::Polynomial { z_coef, beta_x, .. } => z_coef.iter().chain(beta_x).copied().collect(),
            Self::Quadratic { beta1_x, beta2_x, .. } => vec![*beta1_x, *beta2_x],
            Self::Exponential { beta_x, lambda_x, .. } => vec![*beta_x, *lambda_x],
            Self::Trigonometric { a0, cos_coef_x, sin_coef_x, omega_x, .. } => std::iter::once(*a0)
                .chain(cos_coef_x.iter().copied())
                .chain(sin_coef_x.iter().copied())
                .chain(std::iter::once(*omega_x))
                .collect(),
            Self::AbsoluteValue { beta_x, k_x, b_x } => vec![*beta_x, *k_x, *b_x],
        }
    }
}

/// Dispatches on the model family.
pub fn transform(spec: &ModelSpec) -> Result<TransformedParams> {
    spec.ensure_valid()?;
    match &spec.regression {
        Family::LinearMv { .. } => transform_linear(spec),
        Family::Polynomial { .. } | Family::Quadratic { .. } => transform_polynomial(spec),
        Family::Exponential { .. } => transform_exponential(spec),
        Family::Trigonometric { .. } => transform_trig(spec),
        Family::AbsoluteValue { .. } => transform_abs(spec),
    }
}

/// Observable-regression parameters of the multivariate linear model.
pub fn transform_linear(spec: &ModelSpec) -> Result<TransformedParams> {
    let Family::LinearMv { intercept, z_coef, xi_coef } = &spec.regression else {
        return Err(Error::InvalidInput(format!("expected linear-mv family, got {}", spec.family_name())));
    };
    let d = spec.response_dim();
    let m = spec.latent_dim();
    let cg = condition_gaussian(spec)?;

    // B_xᵀ = BᵀΣ_ξΣ_x⁻¹ + Σ_εδΣ_x⁻¹
    let x_coef_t = xi_coef.transpose() * &cg.coeff_xi + &cg.coeff_eps;
    // b_x = b + BᵀΣ_δΣ_x⁻¹μ − Σ_εδΣ_x⁻¹μ
    let offset = nalgebra::DVector::from_column_slice(&cg.offset_xi);
    let mu = nalgebra::DVector::from_column_slice(&spec.xi_mean);
    let shift = xi_coef.transpose() * offset - &cg.coeff_eps * mu;
    let b_x: Vec<f64> = intercept.iter().zip(shift.iter()).map(|(a, b)| a + b).collect();

    // Σ_u = Σ_e + [Bᵀ I] V [B; I]
    let mut lift = Matrix::zeros(m + d, d);
    lift.view_mut((0, 0), (m, d)).copy_from(xi_coef);
    lift.view_mut((m, 0), (d, d)).copy_from(&Matrix::identity(d, d));
    let sigma_u = spec.sigma_e() + lift.transpose() * &cg.v12 * &lift;
    let sigma_u = (&sigma_u + sigma_u.transpose()) * 0.5;

    Ok(TransformedParams::LinearMv {
        intercept: b_x,
        z_coef: if spec.z_dim() == 0 { Matrix::zeros(0, 0) } else { z_coef.clone() },
        x_coef: x_coef_t.transpose(),
        sigma_u,
    })
}

/// `E[gᵖ]` for `g ~ N(0, variance)`: zero for odd `p`, `(p−1)!! varianceᵖᐟ²` otherwise.
pub fn gaussian_central_moment(p: u32, variance: f64) -> Result<f64> {
    if !(variance >= 0.0) {
        return Err(Error::InvalidInput(format!("variance must be nonnegative, got {variance}")));
    }
    if p % 2 == 1 {
        return Ok(0.0);
    }
    let double_factorial: f64 = (1..p).step_by(2).map(f64::from).product();
    Ok(double_factorial * variance.powi((p / 2) as i32))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

struct ScalarConditioning {
    reliability: f64,
    shift: f64,
    gamma_var: f64,
    eps_slope: f64,
    mu: f64,
    sigma_x2: f64,
}

fn scalar_conditioning(spec: &ModelSpec) -> Result<ScalarConditioning> {
    if spec.latent_dim() != 1 || spec.response_dim() != 1 {
        return Err(Error::InvalidInput("scalar-covariate family expected".into()));
    }
    let var_xi = spec.xi_cov[(0, 0)];
    let var_delta = spec.sigma_delta()[(0, 0)];
    let sigma_x2 = var_xi + var_delta;
    if !(sigma_x2 > 0.0) {
        return Err(Error::SingularCovariance(format!("var(x) = {sigma_x2}")));
    }
    let mu = spec.xi_mean[0];
    let reliability = var_xi / sigma_x2;
    Ok(ScalarConditioning {
        reliability,
        shift: var_delta * mu / sigma_x2,
        gamma_var: var_xi * var_delta / sigma_x2,
        eps_slope: spec.sigma_eps_delta()[(0, 0)] / sigma_x2,
        mu,
        sigma_x2,
    })
}

/// Coefficients of `E[Σ_{j=1..k} βⱼ (a + Kx + γ)ʲ | x]` as a polynomial in `x`
/// (index = power), using exact binomial expansion and Gaussian moments of `γ`.
fn expand_conditional_polynomial(beta: &[f64], shift: f64, slope: f64, gamma_var: f64) -> Result<Vec<f64>> {
    let k = beta.len();
    let mut coef = vec![0.0; k + 1];
    for (jm1, bj) in beta.iter().enumerate() {
        let j = jm1 + 1;
        for p in (0..=j).step_by(2) {
            let moment = gaussian_central_moment(p as u32, gamma_var)?;
            let outer = bj * binomial(j, p) * moment;
            let r = j - p;
            // (a + Kx)^r = Σ_s C(r, s) a^{r−s} K^s x^s
            for s in 0..=r {
                coef[s] += outer * binomial(r, s) * shift.powi((r - s) as i32) * slope.powi(s as i32);
            }
        }
    }
    Ok(coef)
}

/// Observable-regression parameters of the polynomial (and quadratic) models.
pub fn transform_polynomial(spec: &ModelSpec) -> Result<TransformedParams> {
    let sc = scalar_conditioning(spec)?;
    match &spec.regression {
        Family::Polynomial { z_coef, beta0, beta } => {
            let mut coef = expand_conditional_polynomial(beta, sc.shift, sc.reliability, sc.gamma_var)?;
            coef[0] += beta0 - sc.eps_slope * sc.mu;
            coef[1] += sc.eps_slope;
            Ok(TransformedParams::Polynomial {
                z_coef: z_coef.clone(),
                beta0_x: coef[0],
                beta_x: coef[1..].to_vec(),
                shift: sc.shift,
                reliability: sc.reliability,
                gamma_var: sc.gamma_var,
                eps_slope: sc.eps_slope,
            })
        }
        Family::Quadratic { beta0, beta1, beta2, .. } => {
            let coef = expand_conditional_polynomial(&[*beta1, *beta2], sc.shift, sc.reliability, sc.gamma_var)?;
            let k = sc.reliability;
            let g = sc.gamma_var;
            let lead = beta1 + 2.0 * beta2 * sc.mu;
            let m_u2 = spec.sigma_e()[(0, 0)]
                + g * (lead * lead + 4.0 * beta2 * beta2 * k * k * sc.sigma_x2)
                + 2.0 * beta2 * beta2 * g * g;
            Ok(TransformedParams::Quadratic {
                beta0_x: beta0 + coef[0],
                beta1_x: coef[1],
                beta2_x: coef[2],
                reliability: k,
                gamma_var: g,
                mu: sc.mu,
                sigma_x2: sc.sigma_x2,
                m_u2,
            })
        }
        other => Err(Error::InvalidInput(format!("expected polynomial family, got {}", other.name()))),
    }
}

/// Conditional variance of the quadratic-model residual at one `x`, its
/// average over `x`, and the computable bound term `G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticVariance {
    pub var_u_given_x: f64,
    pub m_u2: f64,
    pub g: f64,
}

/// The term `G(x, μ, σ²_x, β₁ₓ, β₂ₓ)` bounding `Var(u|x) − m_u²` for any
/// reliability ratio at least `k0`:
///
/// `β₂ₓ²[x² − μ² − σ²_x + 2(μ(x−μ))₋(1−K₀)²(1 + 1/K₀)] + (β₁ₓβ₂ₓ(x−μ))₊`.
pub fn variance_bound_term(x: f64, mu: f64, sigma_x2: f64, beta1_x: f64, beta2_x: f64, k0: f64) -> Result<f64> {
    check_k0(k0)?;
    let neg_part = (-(mu * (x - mu))).max(0.0);
    let bracket = x * x - mu * mu - sigma_x2 + 2.0 * neg_part * (1.0 - k0).powi(2) * (1.0 + 1.0 / k0);
    Ok(beta2_x * beta2_x * bracket + (beta1_x * beta2_x * (x - mu)).max(0.0))
}

/// `m_u² + 4(1/K₀ − 1)σ²_x G`, the upper bound on `Var(u | x)`.
pub fn variance_bound(m_u2: f64, sigma_x2: f64, g: f64, k0: f64) -> Result<f64> {
    check_k0(k0)?;
    Ok(m_u2 + 4.0 * (1.0 / k0 - 1.0) * sigma_x2 * g)
}

pub(crate) fn check_k0(k0: f64) -> Result<()> {
    if k0 > 0.0 && k0 <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("reliability lower bound k0 must lie in (0, 1/2], got {k0}")))
    }
}

/// Exact `Var(u | x)` of the quadratic model, `m_u² = E Var(u | x)` and `G`
/// evaluated at the population parameters with the spec's `k0`.
pub fn transform_quadratic_variance(spec: &ModelSpec, x: f64) -> Result<QuadraticVariance> {
    let Family::Quadratic { beta1, beta2, k0, .. } = &spec.regression else {
        return Err(Error::InvalidInput(format!("expected quadratic family, got {}", spec.family_name())));
    };
    let k0 = k0.ok_or_else(|| Error::InvalidInput("quadratic spec has no reliability lower bound k0".into()))?;
    check_k0(k0)?;
    let TransformedParams::Quadratic { beta1_x, beta2_x, reliability, gamma_var, mu, sigma_x2, m_u2, .. } =
        transform_polynomial(spec)?
    else {
        unreachable!("quadratic family maps to quadratic parameters")
    };
    let m_x = reliability * x + (1.0 - reliability) * mu;
    let lead = beta1 + 2.0 * m_x * beta2;
    let var_u_given_x =
        spec.sigma_e()[(0, 0)] + lead * lead * gamma_var + 2.0 * beta2 * beta2 * gamma_var * gamma_var;
    Ok(QuadraticVariance {
        var_u_given_x,
        m_u2,
        g: variance_bound_term(x, mu, sigma_x2, beta1_x, beta2_x, k0)?,
    })
}

/// `β_x = β e^{λ(1−K)μ} exp(λ²Kσ²_δ/2)`, `λ_x = Kλ`.
pub fn transform_exponential(spec: &ModelSpec) -> Result<TransformedParams> {
    let Family::Exponential { beta, lambda } = spec.regression else {
        return Err(Error::InvalidInput(format!("expected exponential family, got {}", spec.family_name())));
    };
    let sc = scalar_conditioning(spec)?;
    let k = sc.reliability;
    Ok(TransformedParams::Exponential {
        beta_x: beta * (lambda * (1.0 - k) * sc.mu).exp() * (0.5 * lambda * lambda * sc.gamma_var).exp(),
        lambda_x: k * lambda,
        reliability: k,
    })
}

/// Harmonics are damped by the characteristic function of `γ ~ N(0, Kσ²_δ)`
/// and rotated by the phase `kω(1−K)μ`; the frequency shrinks to `Kω`.
pub fn transform_trig(spec: &ModelSpec) -> Result<TransformedParams> {
    let Family::Trigonometric { a0, cos_coef, sin_coef, omega } = &spec.regression else {
        return Err(Error::InvalidInput(format!("expected trigonometric family, got {}", spec.family_name())));
    };
    let sc = scalar_conditioning(spec)?;
    let phase = omega * (1.0 - sc.reliability) * sc.mu;
    let mut damping = Vec::with_capacity(cos_coef.len());
    let mut cos_x = Vec::with_capacity(cos_coef.len());
    let mut sin_x = Vec::with_capacity(cos_coef.len());
    for (i, (a, b)) in cos_coef.iter().zip(sin_coef).enumerate() {
        let k = (i + 1) as f64;
        let damp = (-0.5 * k * k * omega * omega * sc.gamma_var).exp();
        let (s, c) = (k * phase).sin_cos();
        damping.push(damp);
        cos_x.push(damp * (a * c + b * s));
        sin_x.push(damp * (b * c - a * s));
    }
    Ok(TransformedParams::Trigonometric {
        a0: *a0,
        cos_coef_x: cos_x,
        sin_coef_x: sin_x,
        omega_x: sc.reliability * omega,
        damping,
        phase,
    })
}

/// `β_x = βσ_δ√K`, `k_x = √K/σ_δ`, `b_x = (a + (1−K)μ)/(σ_δ√K)`.
pub fn transform_abs(spec: &ModelSpec) -> Result<TransformedParams> {
    let Family::AbsoluteValue { beta, shift } = spec.regression else {
        return Err(Error::InvalidInput(format!("expected absolute-value family, got {}", spec.family_name())));
    };
    let var_xi = spec.xi_cov[(0, 0)];
    let var_delta = spec.sigma_delta()[(0, 0)];
    if !(var_xi > 0.0 && var_delta > 0.0) {
        return Err(Error::InvalidInput("absolute-value model needs positive var(xi) and var(delta)".into()));
    }
    let sc = scalar_conditioning(spec)?;
    let k = sc.reliability;
    let sd_delta = var_delta.sqrt();
    let root_k = k.sqrt();
    Ok(TransformedParams::AbsoluteValue {
        beta_x: beta * sd_delta * root_k,
        k_x: root_k / sd_delta,
        b_x: (shift + (1.0 - k) * sc.mu) / (sd_delta * root_k),
    })
}

/// `F(a) = E|g + a| = 2φ(a) + a(2Φ(a) − 1)`.
pub fn abs_f(a: f64) -> f64 {
    abs_normal_mean(a)
}
