//! Random model specs shared by the integration tests.
#![allow(dead_code)]

use eivpred::models::{ErrorStructure, Family, Matrix, ModelSpec, ZDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// `A Aᵀ + ridge I` with entries of `A` uniform on (−1, 1).
pub fn random_pd(rng: &mut ChaCha8Rng, dim: usize, ridge: f64) -> Matrix {
    let a = Matrix::from_fn(dim, dim, |_, _| uniform(rng, -1.0, 1.0));
    let m = &a * a.transpose() + Matrix::identity(dim, dim) * ridge;
    (&m + m.transpose()) * 0.5
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| uniform(rng, -1.5, 1.5))
}

/// Jointly PSD `(Σ_ε, Σ_εδ, Σ_δ)` from one `(d+m)`-dimensional covariance.
fn random_errors(rng: &mut ChaCha8Rng, d: usize, m: usize, with_eps: bool) -> ErrorStructure {
    let stacked = random_pd(rng, d + m, 0.2) * 0.5;
    let sigma_e = random_pd(rng, d, 0.1) * 0.3;
    if with_eps {
        ErrorStructure {
            sigma_e: Some(sigma_e),
            sigma_eps: Some(stacked.view((0, 0), (d, d)).into_owned()),
            sigma_delta: stacked.view((d, d), (m, m)).into_owned(),
            sigma_eps_delta: Some(stacked.view((0, d), (d, m)).into_owned()),
        }
    } else {
        ErrorStructure {
            sigma_e: Some(sigma_e),
            sigma_eps: None,
            sigma_delta: stacked.view((d, d), (m, m)).into_owned(),
            sigma_eps_delta: None,
        }
    }
}

fn gaussian_z(rng: &mut ChaCha8Rng, q: usize) -> ZDistribution {
    ZDistribution::Gaussian { mean: (0..q).map(|_| uniform(rng, -1.0, 1.0)).collect(), cov: random_pd(rng, q, 0.3) }
}

pub fn random_linear(rng: &mut ChaCha8Rng) -> ModelSpec {
    let d = rng.random_range(1..=2);
    let m = rng.random_range(1..=2);
    let q = rng.random_range(0..=1);
    let spec = ModelSpec {
        regression: Family::LinearMv {
            intercept: (0..d).map(|_| uniform(rng, -1.0, 1.0)).collect(),
            z_coef: if q == 0 { Matrix::zeros(0, 0) } else { random_matrix(rng, q, d) },
            xi_coef: random_matrix(rng, m, d),
        },
        xi_mean: (0..m).map(|_| uniform(rng, -1.0, 1.0)).collect(),
        xi_cov: random_pd(rng, m, 0.3),
        z_dist: None,
        errors: random_errors(rng, d, m, true),
    };
    if q > 0 {
        spec.with_z(gaussian_z(rng, q))
    } else {
        spec
    }
}

pub fn random_polynomial(rng: &mut ChaCha8Rng) -> ModelSpec {
    let k = rng.random_range(2..=4);
    let q = rng.random_range(0..=1);
    let spec = ModelSpec {
        regression: Family::Polynomial {
            z_coef: (0..q).map(|_| uniform(rng, -1.0, 1.0)).collect(),
            beta0: uniform(rng, -1.0, 1.0),
            beta: (0..k).map(|_| uniform(rng, -1.0, 1.0)).collect(),
        },
        xi_mean: vec![uniform(rng, -1.0, 1.0)],
        xi_cov: Matrix::from_element(1, 1, uniform(rng, 0.3, 1.5)),
        z_dist: None,
        errors: random_errors(rng, 1, 1, true),
    };
    if q > 0 {
        spec.with_z(gaussian_z(rng, q))
    } else {
        spec
    }
}

fn scalar_errors(rng: &mut ChaCha8Rng) -> ErrorStructure {
    ErrorStructure::equation_only(uniform(rng, 0.05, 0.5), uniform(rng, 0.2, 1.5))
}

pub fn random_quadratic(rng: &mut ChaCha8Rng) -> ModelSpec {
    let regression = Family::Quadratic {
        beta0: uniform(rng, -1.0, 1.0),
        beta1: uniform(rng, -1.5, 1.5),
        beta2: uniform(rng, -1.0, 1.0),
        k0: None,
    };
    ModelSpec::scalar(regression, uniform(rng, -1.0, 1.0), uniform(rng, 0.3, 1.5), scalar_errors(rng))
}

pub fn random_exponential(rng: &mut ChaCha8Rng) -> ModelSpec {
    let regression = Family::Exponential { beta: uniform(rng, -2.0, 2.0), lambda: uniform(rng, -1.0, 1.0) };
    ModelSpec::scalar(regression, uniform(rng, -1.0, 1.0), uniform(rng, 0.3, 1.5), scalar_errors(rng))
}

pub fn random_trig(rng: &mut ChaCha8Rng) -> ModelSpec {
    let h = rng.random_range(1..=3);
    let regression = Family::Trigonometric {
        a0: uniform(rng, -1.0, 1.0),
        cos_coef: (0..h).map(|_| uniform(rng, -1.0, 1.0)).collect(),
        sin_coef: (0..h).map(|_| uniform(rng, -1.0, 1.0)).collect(),
        omega: uniform(rng, 0.3, 1.5),
    };
    ModelSpec::scalar(regression, uniform(rng, -1.0, 1.0), uniform(rng, 0.3, 1.5), scalar_errors(rng))
}

pub fn random_abs(rng: &mut ChaCha8Rng) -> ModelSpec {
    let regression = Family::AbsoluteValue { beta: uniform(rng, -2.0, 2.0), shift: uniform(rng, -1.5, 1.5) };
    ModelSpec::scalar(regression, uniform(rng, -1.0, 1.0), uniform(rng, 0.3, 1.5), scalar_errors(rng))
}

/// 100 covariate values along `μ + t v`, `t ∈ [−3, 3]` standard deviations,
/// with `v` the first coordinate direction scaled by `sd(x₁)`.
pub fn x_grid(spec: &ModelSpec) -> Vec<Vec<f64>> {
    let sd = spec.sigma_x()[(0, 0)].sqrt();
    (0..100)
        .map(|i| {
            let t = -3.0 + 6.0 * i as f64 / 99.0;
            let mut x = spec.xi_mean.clone();
            x[0] += t * sd;
            for (j, v) in x.iter_mut().enumerate().skip(1) {
                *v += 0.5 * t * spec.sigma_x()[(j, j)].sqrt();
            }
            x
        })
        .collect()
}

/// A fixed `z₀` (the mean of `z`) for specs with covariates.
pub fn z_point(spec: &ModelSpec) -> Vec<f64> {
    spec.z_mean().iter().map(|m| m + 0.3).collect()
}
