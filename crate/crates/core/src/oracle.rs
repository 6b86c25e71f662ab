//! Reference values for `E[y | z, x]` and `Var(y | x)` computed from first
//! principles: the exact Gaussian law of `ξ` given `x` integrated by
//! quadrature, plus a plain simulation check.
//!
//! Nothing here uses the transform module, so the two can be compared.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::models::{Family, ModelSpec, Sampler};
use crate::rng::{self, Domain};

pub const DEFAULT_NODES: usize = 64;
/// Half-width, in conditional standard deviations, of the window integrated
/// for the absolute-value family.
const KINK_WINDOW: f64 = 12.0;
const PANELS_PER_PIECE: usize = 16;
const PANEL_NODES: usize = 20;

/// Nodes and weights of a Gauss rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub–Welsch: eigenvalues of the Jacobi matrix are the nodes, squared
/// first eigenvector components times the total mass are the weights.
fn golub_welsch(n: usize, off_diagonal: impl Fn(usize) -> f64, mass: f64) -> QuadratureRule {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = off_diagonal(k);
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mass * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    QuadratureRule { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1).collect() }
}

impl QuadratureRule {
    /// Rule for `E g(Z)`, `Z ~ N(0, 1)` (probabilists' Hermite weight,
    /// weights summing to one).
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidInput("quadrature needs at least one node".into()));
        }
        Ok(golub_welsch(n, |k| (k as f64).sqrt(), 1.0))
    }

    /// Rule for `∫_{-1}^{1} g(t) dt`.
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidInput("quadrature needs at least one node".into()));
        }
        Ok(golub_welsch(
            n,
            |k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            },
            2.0,
        ))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E f(X)` for `X ~ N(mean, variance)` (Hermite rules only).
    pub fn normal_expectation(&self, mean: f64, variance: f64, f: impl Fn(f64) -> f64) -> f64 {
        let sd = variance.max(0.0).sqrt();
        self.nodes.iter().zip(&self.weights).map(|(g, w)| w * f(mean + sd * g)).sum()
    }

    /// `∫_a^b f` (Legendre rules only).
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (half, mid) = (0.5 * (b - a), 0.5 * (a + b));
        half * self.nodes.iter().zip(&self.weights).map(|(t, w)| w * f(mid + half * t)).sum::<f64>()
    }
}

type RuleCache = Mutex<HashMap<(bool, usize), Arc<QuadratureRule>>>;

/// Shared, lazily built rules keyed by (is_hermite, nodes).
fn cached_rule(hermite: bool, n: usize) -> Result<Arc<QuadratureRule>> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(rule) = map.get(&(hermite, n)) {
        return Ok(Arc::clone(rule));
    }
    let rule = Arc::new(if hermite { QuadratureRule::gauss_hermite(n)? } else { QuadratureRule::gauss_legendre(n)? });
    map.insert((hermite, n), Arc::clone(&rule));
    Ok(rule)
}

/// Gaussian law of `ξ` given `x` and the mean of `ε` given `x`, obtained by
/// solving against `Σ_x` with a Cholesky factorization.
struct Posterior {
    xi_mean: Vec<f64>,
    xi_cov: DMatrix<f64>,
    eps_mean: Vec<f64>,
    /// `Cov(ξ, ε | x)` (m x d).
    xi_eps_cov: DMatrix<f64>,
    /// `Var(ε | x)` (d x d).
    eps_cov: DMatrix<f64>,
}

fn posterior(spec: &ModelSpec, x: &[f64]) -> Result<Posterior> {
    let m = spec.latent_dim();
    if x.len() != m {
        return Err(Error::Dimension(format!("x has length {}, model has {m} covariates", x.len())));
    }
    let sigma_x = spec.sigma_x();
    let chol = sigma_x
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("Sigma_x is not positive definite".into()))?;
    let centred = DVector::from_iterator(m, x.iter().zip(&spec.xi_mean).map(|(a, b)| a - b));
    let solved = chol.solve(&centred);
    let sigma_xi = &spec.xi_cov;
    // Cov(x, ε) = Σ_εδᵀ (m x d)
    let cross = spec.sigma_eps_delta().transpose();
    let xi_mean = DVector::from_column_slice(&spec.xi_mean) + sigma_xi * &solved;
    let eps_mean = cross.transpose() * &solved;
    let xi_cov = sigma_xi - sigma_xi * chol.solve(sigma_xi);
    let xi_eps_cov = -(sigma_xi * chol.solve(&cross));
    let eps_cov = spec.sigma_eps() - cross.transpose() * chol.solve(&cross);
    Ok(Posterior {
        xi_mean: xi_mean.iter().copied().collect(),
        xi_cov: (&xi_cov + xi_cov.transpose()) * 0.5,
        eps_mean: eps_mean.iter().copied().collect(),
        xi_eps_cov,
        eps_cov,
    })
}

/// `E f(ξ)` for scalar `ξ ~ N(mean, var)`; for the absolute-value family the
/// Hermite rule is replaced by composite Gauss–Legendre split at the kink.
fn scalar_expectation(spec: &ModelSpec, mean: f64, var: f64, nodes: usize, f: impl Fn(f64) -> f64) -> Result<f64> {
    if var <= 0.0 {
        return Ok(f(mean));
    }
    let sd = var.sqrt();
    if let Family::AbsoluteValue { shift, .. } = spec.regression {
        let rule = cached_rule(false, PANEL_NODES)?;
        let kink = (-shift - mean) / sd;
        let mut breaks = vec![-KINK_WINDOW];
        if kink > -KINK_WINDOW && kink < KINK_WINDOW {
            breaks.push(kink);
        }
        breaks.push(KINK_WINDOW);
        let density = |g: f64| (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut total = 0.0;
        for piece in breaks.windows(2) {
            let width = (piece[1] - piece[0]) / PANELS_PER_PIECE as f64;
            for p in 0..PANELS_PER_PIECE {
                let a = piece[0] + p as f64 * width;
                total += rule.integrate(a, a + width, |g| f(mean + sd * g) * density(g));
            }
        }
        return Ok(total);
    }
    let rule = cached_rule(true, nodes)?;
    Ok(rule.normal_expectation(mean, var, f))
}

fn check_nodes(nodes: usize) -> Result<()> {
    if nodes < 8 {
        return Err(Error::InvalidInput(format!("quadrature needs at least 8 nodes, got {nodes}")));
    }
    Ok(())
}

/// `E[y | z₀, x]` by integrating the latent regression function against the
/// conditional law of `ξ`, plus `E[ε | x]`. Product rules are used for
/// `m <= 3` covariates.
pub fn conditional_expectation(spec: &ModelSpec, z0: &[f64], x: &[f64], nodes: usize) -> Result<Vec<f64>> {
    check_nodes(nodes)?;
    spec.ensure_valid()?;
    if z0.len() != spec.z_dim() {
        return Err(Error::Dimension(format!("z has length {}, model has {}", z0.len(), spec.z_dim())));
    }
    let post = posterior(spec, x)?;
    let m = spec.latent_dim();
    let d = spec.response_dim();
    let mut out = if m == 1 {
        let mut acc = vec![0.0; d];
        for (j, slot) in acc.iter_mut().enumerate() {
            *slot = scalar_expectation(spec, post.xi_mean[0], post.xi_cov[(0, 0)], nodes, |t| {
                spec.regression_function(z0, &[t])[j]
            })?;
        }
        acc
    } else if m <= 3 {
        let rule = cached_rule(true, nodes)?;
        let l = linalg::cholesky(&SymMatrix::symmetrized(post.xi_cov.clone())?)?;
        let mut acc = vec![0.0; d];
        let mut index = vec![0usize; m];
        let total = nodes.pow(m as u32);
        let mut g = vec![0.0; m];
        let mut xi = vec![0.0; m];
        for _ in 0..total {
            let mut w = 1.0;
            for k in 0..m {
                g[k] = rule.nodes[index[k]];
                w *= rule.weights[index[k]];
            }
            for i in 0..m {
                xi[i] = post.xi_mean[i] + (0..=i).map(|k| l[(i, k)] * g[k]).sum::<f64>();
            }
            for (a, v) in acc.iter_mut().zip(spec.regression_function(z0, &xi)) {
                *a += w * v;
            }
            for slot in index.iter_mut() {
                *slot += 1;
                if *slot < nodes {
                    break;
                }
                *slot = 0;
            }
        }
        acc
    } else {
        return Err(Error::Unsupported(format!("quadrature oracle supports at most 3 covariates, got {m}")));
    };
    for (o, e) in out.iter_mut().zip(&post.eps_mean) {
        *o += e;
    }
    Ok(out)
}

/// `Var(y | z₀, x)` for scalar-response, scalar-covariate models:
/// `σ²_e + Var(η(ξ) + ε | x)`, with the `ξ`–`ε` coupling handled through
/// the regression of `ε` on `ξ` given `x`.
pub fn conditional_variance(spec: &ModelSpec, z0: &[f64], x: f64, nodes: usize) -> Result<f64> {
    check_nodes(nodes)?;
    spec.ensure_valid()?;
    if spec.latent_dim() != 1 || spec.response_dim() != 1 {
        return Err(Error::Unsupported("conditional variance oracle needs scalar y and scalar x".into()));
    }
    if z0.len() != spec.z_dim() {
        return Err(Error::Dimension(format!("z has length {}, model has {}", z0.len(), spec.z_dim())));
    }
    let post = posterior(spec, &[x])?;
    let (mean, var) = (post.xi_mean[0], post.xi_cov[(0, 0)]);
    let eta = |t: f64| spec.regression_function(z0, &[t])[0];
    let first = scalar_expectation(spec, mean, var, nodes, eta)?;
    let var_eta = scalar_expectation(spec, mean, var, nodes, |t| (eta(t) - first).powi(2))?;
    let cov_eta_eps = if var > 0.0 {
        let cov_eta_xi = scalar_expectation(spec, mean, var, nodes, |t| (eta(t) - first) * (t - mean))?;
        post.xi_eps_cov[(0, 0)] / var * cov_eta_xi
    } else {
        0.0
    };
    Ok(spec.sigma_e()[(0, 0)] + var_eta + 2.0 * cov_eta_eps + post.eps_cov[(0, 0)])
}

/// Simulated conditional mean of `y` over one bin of `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMean {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
    /// Fewer than two draws fell in the bin; `mean` and `std_error` are NaN
    /// and the bin must be excluded from comparisons.
    pub empty: bool,
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidInput("bin edges must be finite and strictly increasing, at least two".into()));
    }
    Ok(())
}

/// Simulation-based `E[y | x ∈ bin]` for scalar `x` and `y`.
pub fn mc_conditional_check(spec: &ModelSpec, edges: &[f64], n: usize, seed: u64) -> Result<Vec<BinMean>> {
    check_edges(edges)?;
    if n < 100_000 {
        return Err(Error::InvalidInput(format!("simulation check needs n >= 100000, got {n}")));
    }
    if spec.latent_dim() != 1 || spec.response_dim() != 1 {
        return Err(Error::Unsupported("binned check needs scalar y and scalar x".into()));
    }
    let sampler = Sampler::new(spec)?;
    let bins = edges.len() - 1;
    let mut count = vec![0usize; bins];
    let mut sum = vec![0.0; bins];
    let mut sum_sq = vec![0.0; bins];
    for i in 0..n {
        let mut rng = rng::stream(seed, Domain::Check, 0, i as u64);
        let (_, x, y) = sampler.draw_observed(&mut rng);
        let xv = x[0];
        if xv < edges[0] || xv >= edges[bins] {
            continue;
        }
        let b = edges.partition_point(|&e| e <= xv) - 1;
        count[b] += 1;
        sum[b] += y[0];
        sum_sq[b] += y[0] * y[0];
    }
    Ok((0..bins)
        .map(|b| {
            let c = count[b];
            let empty = c < 2;
            let (mean, se) = if empty {
                (f64::NAN, f64::NAN)
            } else {
                let mean = sum[b] / c as f64;
                let var = ((sum_sq[b] - c as f64 * mean * mean) / (c as f64 - 1.0)).max(0.0);
                (mean, (var / c as f64).sqrt())
            };
            BinMean { lower: edges[b], upper: edges[b + 1], count: c, mean, std_error: se, empty }
        })
        .collect())
}

/// Quadrature `E[y | x ∈ bin]` for scalar `x`: the conditional mean averaged
/// over the normal density of `x` within each bin.
pub fn binned_expectation(spec: &ModelSpec, edges: &[f64], nodes: usize) -> Result<Vec<f64>> {
    check_edges(edges)?;
    if spec.latent_dim() != 1 || spec.response_dim() != 1 || spec.z_dim() != 0 {
        return Err(Error::Unsupported("binned expectation needs scalar y, scalar x and no z".into()));
    }
    let rule = cached_rule(false, 64)?;
    let mu = spec.xi_mean[0];
    let var_x = spec.sigma_x()[(0, 0)];
    let density = |t: f64| (-(t - mu).powi(2) / (2.0 * var_x)).exp();
    edges
        .windows(2)
        .map(|w| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (t, wt) in rule.nodes.iter().zip(&rule.weights) {
                let half = 0.5 * (w[1] - w[0]);
                let xv = 0.5 * (w[0] + w[1]) + half * t;
                let p = density(xv) * wt * half;
                num += p * conditional_expectation(spec, &[], &[xv], nodes)?[0];
                den += p;
            }
            Ok(num / den)
        })
        .collect()
}
