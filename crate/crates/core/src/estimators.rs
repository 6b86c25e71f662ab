//! Sample moments, ordinary least squares for the linear and polynomial
//! families, and multi-start nonlinear least squares for the exponential,
//! trigonometric and absolute-value families.
//!
//! Every estimator here targets the parameters of `E[y | z, x]`, the
//! observable regression, not the latent ones.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::models::{eval_power_series, eval_trig, matrix_serde, Dataset, Family, Matrix, ModelSpec};
use crate::optimizer::{self, LsModel, Outcome};
use crate::special::{abs_normal_mean, abs_normal_mean_derivative};

pub const MAX_POLYNOMIAL_DEGREE: usize = 6;
pub const CONDITION_WARNING: f64 = 1e12;
pub const STARTS: usize = 8;

/// Which observable regression to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FitFamily {
    Linear,
    Polynomial { degree: usize },
    Exponential,
    Trigonometric { harmonics: usize },
    AbsoluteValue,
}

impl FitFamily {
    /// The family whose observable regression has the same form as the
    /// spec's latent one.
    pub fn for_spec(spec: &ModelSpec) -> Self {
        match &spec.regression {
            Family::LinearMv { .. } => Self::Linear,
            Family::Polynomial { beta, .. } => Self::Polynomial { degree: beta.len() },
            Family::Quadratic { .. } => Self::Polynomial { degree: 2 },
            Family::Exponential { .. } => Self::Exponential,
            Family::Trigonometric { cos_coef, .. } => Self::Trigonometric { harmonics: cos_coef.len() },
            Family::AbsoluteValue { .. } => Self::AbsoluteValue,
        }
    }

    pub fn is_ols(&self) -> bool {
        matches!(self, Self::Linear | Self::Polynomial { .. })
    }
}

/// Means and covariances of the data. `S` matrices use `1/n`; `sigma_x_hat`
/// uses `1/(n−1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    pub n: usize,
    pub y_mean: Vec<f64>,
    /// Mean of the regressor vector `r` (`(z, x)` or `(z, x, …, xᵏ)`).
    pub r_mean: Vec<f64>,
    #[serde(with = "matrix_serde")]
    pub s_rr: Matrix,
    #[serde(with = "matrix_serde")]
    pub s_ry: Matrix,
    /// `μ̂ = x̄`.
    pub mu_hat: Vec<f64>,
    #[serde(with = "matrix_serde")]
    pub s_xx: Matrix,
    /// `Σ̂_x`, unbiased.
    #[serde(with = "matrix_serde")]
    pub sigma_x_hat: Matrix,
}

/// Fitted parameters of `E[y | z, x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Coefficients {
    Linear {
        intercept: Vec<f64>,
        /// q x d.
        #[serde(with = "matrix_serde")]
        z_coef: Matrix,
        /// m x d.
        #[serde(with = "matrix_serde")]
        x_coef: Matrix,
    },
    Polynomial { z_coef: Vec<f64>, beta0: f64, beta: Vec<f64> },
    Exponential { beta: f64, lambda: f64 },
    Trigonometric { a0: f64, cos_coef: Vec<f64>, sin_coef: Vec<f64>, omega: f64 },
    /// `β F(k x + b)` with `k >= 0`.
    AbsoluteValue { beta: f64, k: f64, b: f64 },
}

impl Coefficients {
    pub fn response_dim(&self) -> usize {
        match self {
            Self::Linear { intercept, .. } => intercept.len(),
            _ => 1,
        }
    }

    pub fn z_dim(&self) -> usize {
        match self {
            Self::Linear { z_coef, .. } => z_coef.nrows(),
            Self::Polynomial { z_coef, .. } => z_coef.len(),
            _ => 0,
        }
    }

    pub fn x_dim(&self) -> usize {
        match self {
            Self::Linear { x_coef, .. } => x_coef.nrows(),
            _ => 1,
        }
    }

    /// The fitted regression function at `(z, x)`. Shapes are not checked.
    pub fn predict(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        match self {
            Self::Linear { intercept, z_coef, x_coef } => (0..intercept.len())
                .map(|j| {
                    intercept[j]
                        + z.iter().enumerate().map(|(i, v)| z_coef[(i, j)] * v).sum::<f64>()
                        + x.iter().enumerate().map(|(i, v)| x_coef[(i, j)] * v).sum::<f64>()
                })
                .collect(),
            Self::Polynomial { z_coef, beta0, beta } => {
                vec![z_coef.iter().zip(z).map(|(c, v)| c * v).sum::<f64>() + beta0 + eval_power_series(beta, x[0])]
            }
            Self::Exponential { beta, lambda } => vec![beta * (lambda * x[0]).exp()],
            Self::Trigonometric { a0, cos_coef, sin_coef, omega } => {
                vec![eval_trig(*a0, cos_coef, sin_coef, *omega, x[0], 0.0)]
            }
            Self::AbsoluteValue { beta, k, b } => vec![beta * abs_normal_mean(k * x[0] + b)],
        }
    }

    /// Coefficients other than the intercept, flattened: z and x blocks
    /// column-major for the linear family; `(β, λ)`, `(a₀, A, B, ω)` or
    /// `(β, k, b)` otherwise.
    pub fn slope_vector(&self) -> Vec<f64> {
        match self {
            Self::Linear { z_coef, x_coef, .. } => z_coef.iter().chain(x_coef.iter()).copied().collect(),
            Self::Polynomial { z_coef, beta, .. } => z_coef.iter().chain(beta).copied().collect(),
            Self::Exponential { beta, lambda } => vec![*beta, *lambda],
            Self::Trigonometric { a0, cos_coef, sin_coef, omega } => std::iter::once(*a0)
                .chain(cos_coef.iter().copied())
                .chain(sin_coef.iter().copied())
                .chain(std::iter::once(*omega))
                .collect(),
            Self::AbsoluteValue { beta, k, b } => vec![*beta, *k, *b],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Least-squares penalty `Σ‖y_i − f(z_i, x_i)‖²` at the solution.
    pub objective: f64,
    /// Condition number of `S_rr` (OLS only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_number: Option<f64>,
    pub converged: bool,
    pub starts: usize,
    pub starts_converged: usize,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub coefficients: Coefficients,
    /// `Σ̂_u` (d x d), or `m̂_{u²}` as a 1x1 matrix for scalar families.
    #[serde(with = "matrix_serde")]
    pub residual_moment: Matrix,
    pub moments: SampleMoments,
    pub n: usize,
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    pub fn predict(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        self.coefficients.predict(z, x)
    }
}

/// Regressor matrix (n x p) for the family.
fn regressors(data: &Dataset, family: FitFamily) -> Result<Matrix> {
    let n = data.n();
    match family {
        FitFamily::Linear => {
            let (q, m) = (data.z_dim(), data.x_dim());
            let mut r = Matrix::zeros(n, q + m);
            r.view_mut((0, 0), (n, q)).copy_from(&data.z);
            r.view_mut((0, q), (n, m)).copy_from(&data.x);
            Ok(r)
        }
        FitFamily::Polynomial { degree } => {
            if degree == 0 || degree > MAX_POLYNOMIAL_DEGREE {
                return Err(Error::InvalidInput(format!(
                    "polynomial degree must lie in 1..={MAX_POLYNOMIAL_DEGREE}, got {degree}"
                )));
            }
            require_scalar_x(data)?;
            let q = data.z_dim();
            let mut r = Matrix::zeros(n, q + degree);
            r.view_mut((0, 0), (n, q)).copy_from(&data.z);
            for i in 0..n {
                let x = data.x[(i, 0)];
                let mut power = 1.0;
                for j in 0..degree {
                    power *= x;
                    r[(i, q + j)] = power;
                }
            }
            Ok(r)
        }
        _ => {
            require_scalar_x(data)?;
            Ok(data.x.clone())
        }
    }
}

fn require_scalar_x(data: &Dataset) -> Result<()> {
    if data.x_dim() != 1 {
        return Err(Error::Dimension(format!("family needs scalar x, data has {} columns", data.x_dim())));
    }
    Ok(())
}

fn column_means(a: &Matrix) -> Vec<f64> {
    let n = a.nrows() as f64;
    a.column_iter().map(|c| c.sum() / n).collect()
}

/// `Σ (a_i − ā)(b_i − b̄)ᵀ`.
fn centered_cross(a: &Matrix, a_mean: &[f64], b: &Matrix, b_mean: &[f64]) -> Matrix {
    let ac = Matrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] - a_mean[j]);
    let bc = Matrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] - b_mean[j]);
    ac.transpose() * bc
}

fn moments_from_regressors(data: &Dataset, r: &Matrix) -> Result<SampleMoments> {
    let n = data.n();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 observations, got {n}")));
    }
    let nf = n as f64;
    let y_mean = column_means(&data.y);
    let r_mean = column_means(r);
    let mu_hat = column_means(&data.x);
    let s_rr = centered_cross(r, &r_mean, r, &r_mean) / nf;
    let s_ry = centered_cross(r, &r_mean, &data.y, &y_mean) / nf;
    let sum_xx = centered_cross(&data.x, &mu_hat, &data.x, &mu_hat);
    Ok(SampleMoments {
        n,
        y_mean,
        r_mean,
        s_rr: (&s_rr + s_rr.transpose()) * 0.5,
        s_ry,
        mu_hat,
        s_xx: &sum_xx / nf,
        sigma_x_hat: &sum_xx / (nf - 1.0),
    })
}

/// Means and `1/n` covariances of `y` and the family's regressors, plus `μ̂`
/// and the unbiased `Σ̂_x`.
pub fn sample_moments(data: &Dataset, family: FitFamily) -> Result<SampleMoments> {
    let r = regressors(data, family)?;
    moments_from_regressors(data, &r)
}

/// `(1/n) Σ r_i r_iᵀ` of the residuals `r_i = y_i − f(z_i, x_i)`.
pub fn residual_covariance(data: &Dataset, fit: &FittedModel) -> SymMatrix {
    residual_covariance_of(data, &fit.coefficients).0
}

fn residual_covariance_of(data: &Dataset, coefficients: &Coefficients) -> (SymMatrix, f64) {
    let d = data.response_dim();
    let mut acc = Matrix::zeros(d, d);
    let z_row = |i: usize| data.z.row(i).iter().copied().collect::<Vec<_>>();
    let x_row = |i: usize| data.x.row(i).iter().copied().collect::<Vec<_>>();
    for i in 0..data.n() {
        let pred = coefficients.predict(&z_row(i), &x_row(i));
        let res: Vec<f64> = (0..d).map(|j| data.y[(i, j)] - pred[j]).collect();
        for a in 0..d {
            for b in 0..=a {
                acc[(a, b)] += res[a] * res[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            acc[(b, a)] = acc[(a, b)];
        }
    }
    let objective = acc.trace();
    let cov = SymMatrix::new(acc / data.n() as f64).expect("residual outer products are symmetric");
    (cov, objective)
}

/// OLS fit of the linear or polynomial family:
/// `(Ĉ; B̂) = S_rr⁺ S_ry`, intercept from the means.
pub fn ols_fit(data: &Dataset, family: FitFamily) -> Result<FittedModel> {
    if !family.is_ols() {
        return Err(Error::InvalidInput(format!("{family:?} is not fitted by OLS")));
    }
    if let FitFamily::Polynomial { .. } = family {
        if data.response_dim() != 1 {
            return Err(Error::Dimension("polynomial family needs scalar y".into()));
        }
    }
    let r = regressors(data, family)?;
    let p = r.ncols();
    if data.n() < p + 1 {
        return Err(Error::InsufficientData(format!("need at least {} observations for {p} regressors", p + 1)));
    }
    let moments = moments_from_regressors(data, &r)?;
    let s_rr = SymMatrix::new(moments.s_rr.clone())?;
    let mut warnings = Vec::new();
    let condition_number = s_rr.condition_number();
    if condition_number > CONDITION_WARNING {
        let msg = format!("regressor covariance is ill conditioned (condition number {condition_number:.3e})");
        warn!("{msg}");
        warnings.push(msg);
    }
    let coef = linalg::pinv_default(&s_rr)?.as_matrix() * &moments.s_ry;
    let d = data.response_dim();
    let q = data.z_dim();
    let intercept: Vec<f64> = (0..d)
        .map(|j| moments.y_mean[j] - (0..p).map(|i| coef[(i, j)] * moments.r_mean[i]).sum::<f64>())
        .collect();
    let coefficients = match family {
        FitFamily::Linear => Coefficients::Linear {
            intercept,
            z_coef: coef.rows(0, q).into_owned(),
            x_coef: coef.rows(q, p - q).into_owned(),
        },
        _ => Coefficients::Polynomial {
            z_coef: coef.rows(0, q).iter().copied().collect(),
            beta0: intercept[0],
            beta: coef.rows(q, p - q).iter().copied().collect(),
        },
    };
    let (residual, objective) = residual_covariance_of(data, &coefficients);
    Ok(FittedModel {
        coefficients,
        residual_moment: residual.into_matrix(),
        moments,
        n: data.n(),
        diagnostics: FitDiagnostics {
            objective,
            condition_number: Some(condition_number),
            converged: true,
            starts: 1,
            starts_converged: 1,
            iterations: 0,
            warnings,
        },
    })
}

/// Starting points for the nonlinear fits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Moment-based heuristic starts only.
    #[default]
    Heuristic,
    /// A caller-supplied parameter vector (same layout as
    /// [`Coefficients::slope_vector`]) tried first, then heuristic starts.
    WithStart(Vec<f64>),
}

struct ExpModel;

impl LsModel for ExpModel {
    fn n_params(&self) -> usize {
        2
    }
    fn eval(&self, t: &[f64], x: f64, g: &mut [f64]) -> f64 {
        let e = (t[1] * x).exp();
        g[0] = e;
        g[1] = t[0] * x * e;
        t[0] * e
    }
}

struct TrigModel {
    harmonics: usize,
}

impl LsModel for TrigModel {
    fn n_params(&self) -> usize {
        2 * self.harmonics + 2
    }
    fn eval(&self, t: &[f64], x: f64, g: &mut [f64]) -> f64 {
        let h = self.harmonics;
        let omega = t[2 * h + 1];
        let mut value = t[0];
        g[0] = 1.0;
        let mut d_omega = 0.0;
        for k in 0..h {
            let kf = (k + 1) as f64;
            let (s, c) = (kf * omega * x).sin_cos();
            let (a, b) = (t[1 + k], t[1 + h + k]);
            value += a * c + b * s;
            g[1 + k] = c;
            g[1 + h + k] = s;
            d_omega += kf * x * (b * c - a * s);
        }
        g[2 * h + 1] = d_omega;
        value
    }
}

struct AbsModel;

impl LsModel for AbsModel {
    fn n_params(&self) -> usize {
        3
    }
    fn eval(&self, t: &[f64], x: f64, g: &mut [f64]) -> f64 {
        let arg = t[1] * x + t[2];
        let f = abs_normal_mean(arg);
        let df = abs_normal_mean_derivative(arg);
        g[0] = f;
        g[1] = t[0] * df * x;
        g[2] = t[0] * df;
        t[0] * f
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Location of the kink of a `|·|`-shaped cloud: the extreme bin mean among
/// 20 equal-count bins of `x`, a minimum if the ends sit above the middle.
fn kink_location(x: &[f64], y: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let bins = 20.min(x.len());
    let mut centres = Vec::with_capacity(bins);
    let mut means = Vec::with_capacity(bins);
    for b in 0..bins {
        let lo = b * x.len() / bins;
        let hi = ((b + 1) * x.len() / bins).max(lo + 1);
        let slice = &idx[lo..hi];
        centres.push(slice.iter().map(|&i| x[i]).sum::<f64>() / slice.len() as f64);
        means.push(slice.iter().map(|&i| y[i]).sum::<f64>() / slice.len() as f64);
    }
    let ends = 0.5 * (means[0] + means[bins - 1]);
    let mut sorted = means.clone();
    sorted.sort_by(f64::total_cmp);
    let middle = sorted[bins / 2];
    let pick = if ends >= middle {
        means.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))
    } else {
        means.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))
    };
    centres[pick.map_or(0, |(i, _)| i)]
}

/// `argmin_β Σ (y − β g)²`.
fn profile_scale(y: &[f64], g: impl Iterator<Item = f64>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (yi, gi) in y.iter().zip(g) {
        num += yi * gi;
        den += gi * gi;
    }
    if den > 0.0 && den.is_finite() {
        num / den
    } else {
        0.0
    }
}

fn exp_starts(x: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
    let sx = std_dev(x).max(f64::MIN_POSITIVE);
    let positive = y.iter().filter(|&&v| v > 0.0).count();
    let sign = if 2 * positive >= y.len() { 1.0 } else { -1.0 };
    // log-linear regression on the points of the dominant sign
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(_, &v)| sign * v > 0.0).map(|(&a, &v)| (a, (sign * v).ln())).collect();
    let lambda0 = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    } else {
        0.0
    };
    let lambdas = [lambda0, -lambda0, 0.5 * lambda0, 2.0 * lambda0, 0.0, 1.0 / sx, -1.0 / sx, lambda0 + 0.5 / sx];
    lambdas
        .iter()
        .map(|&l| {
            let beta = profile_scale(y, x.iter().map(|v| (l * v).exp()));
            vec![beta, l]
        })
        .collect()
}

/// Linear least squares of `y` on `[1, cos kωx, sin kωx]` at fixed `ω`;
/// returns the coefficients and the residual sum of squares.
fn trig_profile(x: &[f64], y: &[f64], harmonics: usize, omega: f64) -> (Vec<f64>, f64) {
    let p = 2 * harmonics + 1;
    let mut xtx = Matrix::zeros(p, p);
    let mut xty = nalgebra::DVector::zeros(p);
    let mut row = vec![0.0; p];
    let fill = |xi: f64, row: &mut [f64]| {
        row[0] = 1.0;
        for k in 0..harmonics {
            let (s, c) = ((k + 1) as f64 * omega * xi).sin_cos();
            row[1 + k] = c;
            row[1 + harmonics + k] = s;
        }
    };
    for (&xi, &yi) in x.iter().zip(y) {
        fill(xi, &mut row);
        for a in 0..p {
            xty[a] += row[a] * yi;
            for b in 0..p {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    let coef: Vec<f64> = match SymMatrix::symmetrized(xtx).and_then(|m| linalg::pinv_default(&m)) {
        Ok(inv) => (inv.as_matrix() * xty).iter().copied().collect(),
        Err(_) => vec![0.0; p],
    };
    let rss = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            fill(xi, &mut row);
            let f: f64 = row.iter().zip(&coef).map(|(a, b)| a * b).sum();
            (yi - f).powi(2)
        })
        .sum();
    (coef, rss)
}

fn trig_starts(x: &[f64], y: &[f64], harmonics: usize, count: usize) -> Vec<Vec<f64>> {
    let sx = std_dev(x).max(f64::MIN_POSITIVE);
    // A deterministic subsample keeps the frequency scan cheap for large n.
    let stride = (x.len() / 2000).max(1);
    let xs: Vec<f64> = x.iter().step_by(stride).copied().collect();
    let ys: Vec<f64> = y.iter().step_by(stride).copied().collect();
    let grid = 600;
    let (lo, hi) = (0.05 / sx, 12.0 / sx);
    let scan: Vec<(f64, Vec<f64>, f64)> = (0..grid)
        .map(|i| {
            let w = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
            let (coef, rss) = trig_profile(&xs, &ys, harmonics, w);
            (w, coef, rss)
        })
        .collect();
    let mut minima: Vec<usize> = (0..grid)
        .filter(|&i| (i == 0 || scan[i].2 <= scan[i - 1].2) && (i + 1 == grid || scan[i].2 <= scan[i + 1].2))
        .collect();
    minima.sort_by(|&a, &b| scan[a].2.total_cmp(&scan[b].2));
    minima
        .into_iter()
        .take(count)
        .map(|i| {
            let (w, coef, _) = &scan[i];
            let mut theta = coef.clone();
            theta.push(*w);
            theta
        })
        .collect()
}

fn abs_starts(x: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
    let sx = std_dev(x).max(f64::MIN_POSITIVE);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let kink = kink_location(x, y);
    let mut starts = Vec::with_capacity(STARTS);
    for centre in [kink, mean] {
        for scale in [0.5, 1.0, 2.0, 4.0] {
            let k = scale / sx;
            let b = -k * centre;
            let beta = profile_scale(y, x.iter().map(|v| abs_normal_mean(k * v + b)));
            starts.push(vec![beta, k, b]);
        }
    }
    starts
}

/// Runs the optimizer from every start and keeps the best converged result.
fn multi_start(starts: &[Vec<f64>], run: impl Fn(&[f64]) -> Outcome) -> Result<(Outcome, usize)> {
    let mut best: Option<Outcome> = None;
    let mut best_any = f64::INFINITY;
    let mut converged = 0;
    let mut iterations = 0;
    for start in starts {
        let out = run(start);
        iterations += out.iterations;
        best_any = best_any.min(out.objective);
        if out.converged && out.objective.is_finite() {
            converged += 1;
            if best.as_ref().is_none_or(|b| out.objective < b.objective) {
                best = Some(out);
            }
        }
    }
    match best {
        Some(mut out) => {
            out.iterations = iterations;
            Ok((out, converged))
        }
        None => Err(Error::NonConvergence {
            starts: starts.len(),
            best_objective: best_any,
            reason: "no start met the convergence criterion".into(),
        }),
    }
}

fn scalar_columns(data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    require_scalar_x(data)?;
    if data.response_dim() != 1 {
        return Err(Error::Dimension("family needs scalar y".into()));
    }
    if data.z_dim() != 0 {
        return Err(Error::Dimension("family does not take z covariates".into()));
    }
    Ok((data.x.column(0).iter().copied().collect(), data.y.column(0).iter().copied().collect()))
}

/// Multi-start least squares for the exponential, trigonometric and
/// absolute-value families. The absolute-value fit is `β F(kx + b)`,
/// normalised to `k >= 0`.
pub fn nls_fit(data: &Dataset, family: FitFamily, init: &InitStrategy) -> Result<FittedModel> {
    let (x, y) = scalar_columns(data)?;
    let n_params = match family {
        FitFamily::Exponential => 2,
        FitFamily::Trigonometric { harmonics } => {
            if harmonics == 0 {
                return Err(Error::InvalidInput("trigonometric family needs at least one harmonic".into()));
            }
            2 * harmonics + 2
        }
        FitFamily::AbsoluteValue => 3,
        _ => return Err(Error::InvalidInput(format!("{family:?} is fitted by OLS, not nls_fit"))),
    };
    if data.n() < n_params + 1 {
        return Err(Error::InsufficientData(format!("need at least {} observations", n_params + 1)));
    }
    let mut starts = Vec::with_capacity(STARTS + 1);
    if let InitStrategy::WithStart(s) = init {
        if s.len() != n_params {
            return Err(Error::Dimension(format!("start has {} entries, family needs {n_params}", s.len())));
        }
        starts.push(s.clone());
    }
    let (outcome, converged) = match family {
        FitFamily::Exponential => {
            starts.extend(exp_starts(&x, &y));
            multi_start(&starts, |s| optimizer::levenberg_marquardt(&ExpModel, &x, &y, s))?
        }
        FitFamily::Trigonometric { harmonics } => {
            let room = STARTS.saturating_sub(starts.len()).max(1);
            starts.extend(trig_starts(&x, &y, harmonics, room));
            let model = TrigModel { harmonics };
            multi_start(&starts, |s| optimizer::levenberg_marquardt(&model, &x, &y, s))?
        }
        _ => {
            starts.extend(abs_starts(&x, &y));
            multi_start(&starts, |s| optimizer::levenberg_marquardt(&AbsModel, &x, &y, s))?
        }
    };
    let t = &outcome.theta;
    let coefficients = match family {
        FitFamily::Exponential => Coefficients::Exponential { beta: t[0], lambda: t[1] },
        FitFamily::Trigonometric { harmonics: h } => {
            // cos is even and sin odd in ω
            let flip = if t[2 * h + 1] < 0.0 { -1.0 } else { 1.0 };
            Coefficients::Trigonometric {
                a0: t[0],
                cos_coef: t[1..=h].to_vec(),
                sin_coef: t[1 + h..=2 * h].iter().map(|b| flip * b).collect(),
                omega: flip * t[2 * h + 1],
            }
        }
        _ => {
            // F is even, so (β, k, b) and (β, −k, −b) are the same function
            let flip = if t[1] < 0.0 { -1.0 } else { 1.0 };
            Coefficients::AbsoluteValue { beta: t[0], k: flip * t[1], b: flip * t[2] }
        }
    };
    let moments = moments_from_regressors(data, &data.x)?;
    let (residual, objective) = residual_covariance_of(data, &coefficients);
    Ok(FittedModel {
        coefficients,
        residual_moment: residual.into_matrix(),
        moments,
        n: data.n(),
        diagnostics: FitDiagnostics {
            objective,
            condition_number: None,
            converged: true,
            starts: starts.len(),
            starts_converged: converged,
            iterations: outcome.iterations,
            warnings: Vec::new(),
        },
    })
}

/// OLS for the OLS-type families, [`nls_fit`] with heuristic starts for the
/// rest.
pub fn fit(data: &Dataset, family: FitFamily) -> Result<FittedModel> {
    if family.is_ols() {
        ols_fit(data, family)
    } else {
        nls_fit(data, family, &InitStrategy::Heuristic)
    }
}

/// The naive fit `β|x + a|` that ignores measurement error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveAbsFit {
    pub beta: f64,
    pub shift: f64,
    pub objective: f64,
}

impl NaiveAbsFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.beta * (x + self.shift).abs()
    }
}

/// Minimizes `Σ (y_i − β|x_i + a|)²` by Nelder–Mead from 8 starts.
pub fn naive_ols_abs(data: &Dataset) -> Result<NaiveAbsFit> {
    let (x, y) = scalar_columns(data)?;
    if data.n() < 3 {
        return Err(Error::InsufficientData("need at least 3 observations".into()));
    }
    let sx = std_dev(&x).max(f64::MIN_POSITIVE);
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let kink = kink_location(&x, &y);
    let centres = [
        kink,
        mean,
        quantile(&sorted, 0.1),
        quantile(&sorted, 0.25),
        quantile(&sorted, 0.5),
        quantile(&sorted, 0.75),
        quantile(&sorted, 0.9),
        kink + 0.5 * sx,
    ];
    let starts: Vec<Vec<f64>> = centres
        .iter()
        .map(|&c| {
            let a = -c;
            vec![profile_scale(&y, x.iter().map(|v| (v + a).abs())), a]
        })
        .collect();
    let q = |t: &[f64]| -> f64 { x.iter().zip(&y).map(|(xi, yi)| (yi - t[0] * (xi + t[1]).abs()).powi(2)).sum() };
    let (out, _) = multi_start(&starts, |s| {
        let step = [0.1 * s[0].abs().max(0.1), 0.25 * sx];
        // one restart from the first solution guards against simplex collapse
        let first = optimizer::nelder_mead(q, s, &step);
        let second = optimizer::nelder_mead(q, &first.theta, &[0.01 * first.theta[0].abs().max(0.01), 0.02 * sx]);
        Outcome { iterations: first.iterations + second.iterations, ..second }
    })?;
    Ok(NaiveAbsFit { beta: out.theta[0], shift: out.theta[1], objective: out.objective })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(x: &[f64], y: &[f64]) -> Dataset {
        let n = x.len();
        Dataset::from_observed(
            Matrix::from_column_slice(n, 1, y),
            Matrix::zeros(n, 0),
            Matrix::from_column_slice(n, 1, x),
        )
        .unwrap()
    }

    #[test]
    fn moments_hand_example() {
        let data = dataset(&[0.0, 2.0], &[0.0, 2.0]);
        let m = sample_moments(&data, FitFamily::Linear).unwrap();
        assert_eq!(m.s_ry[(0, 0)], 1.0);
        assert_eq!(m.s_rr[(0, 0)], 1.0);
        assert_eq!(m.sigma_x_hat[(0, 0)], 2.0);
        assert!(sample_moments(&dataset(&[1.0], &[1.0]), FitFamily::Linear).is_err());
    }

    #[test]
    fn constant_data_has_zero_covariances() {
        let data = dataset(&[3.0; 5], &[1.5; 5]);
        let m = sample_moments(&data, FitFamily::Polynomial { degree: 3 }).unwrap();
        assert!(m.s_rr.iter().chain(m.s_ry.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn identical_x_gives_minimum_norm_solution() {
        let data = dataset(&[2.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let fit = ols_fit(&data, FitFamily::Linear).unwrap();
        let Coefficients::Linear { intercept, x_coef, .. } = &fit.coefficients else { panic!() };
        assert_eq!(x_coef[(0, 0)], 0.0);
        assert!((intercept[0] - 3.5).abs() < 1e-14);
    }

    #[test]
    fn residual_moment_hand_example() {
        let data = dataset(&[0.0, 1.0], &[-1.0, 1.0]);
        let fit = FittedModel {
            coefficients: Coefficients::Polynomial { z_coef: vec![], beta0: 0.0, beta: vec![0.0] },
            residual_moment: Matrix::zeros(1, 1),
            moments: sample_moments(&data, FitFamily::Linear).unwrap(),
            n: 2,
            diagnostics: FitDiagnostics::default(),
        };
        assert_eq!(residual_covariance(&data, &fit).as_matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn degree_cap() {
        let data = dataset(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], &[0.0; 9]);
        assert!(ols_fit(&data, FitFamily::Polynomial { degree: 7 }).is_err());
        assert!(ols_fit(&data, FitFamily::Polynomial { degree: 0 }).is_err());
    }

    #[test]
    fn kink_is_found() {
        let x: Vec<f64> = (0..400).map(|i| -4.0 + i as f64 / 50.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * (v - 1.0_f64).abs()).collect();
        assert!((kink_location(&x, &y) - 1.0).abs() < 0.5);
        let y: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((kink_location(&x, &y) - 1.0).abs() < 0.5);
    }
}
