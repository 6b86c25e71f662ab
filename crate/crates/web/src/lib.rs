//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export takes plain numbers and returns a JSON string; the page parses
//! it and draws the curves on a canvas.

use eivpred::estimators::{fit, naive_ols_abs, FitFamily};
use eivpred::models::{sample, ErrorStructure, Family, ModelSpec};
use eivpred::predictors::{predict_individual, region_quadratic};
use eivpred::transform::transform;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const GRID: usize = 121;
const SCATTER: usize = 400;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn grid(mu: f64, var_x: f64) -> Vec<f64> {
    let sd = var_x.sqrt();
    (0..GRID).map(|i| mu - 3.0 * sd + 6.0 * sd * i as f64 / (GRID - 1) as f64).collect()
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(err)
}

#[derive(Serialize)]
struct Attenuation {
    reliability: f64,
    x: Vec<f64>,
    latent: Vec<f64>,
    observable: Vec<f64>,
    beta1_x: f64,
    beta2_x: f64,
}

/// The latent curve `β₀ + β₁ξ + β₂ξ²` next to the best predictor `E[y | x]`
/// for the same covariate values.
#[wasm_bindgen]
pub fn attenuation(beta0: f64, beta1: f64, beta2: f64, mu: f64, var_xi: f64, var_delta: f64) -> Result<String, JsError> {
    let spec = quadratic_spec(beta0, beta1, beta2, None, mu, var_xi, var_delta, 0.0);
    let params = transform(&spec).map_err(err)?;
    let eivpred::transform::TransformedParams::Quadratic { beta1_x, beta2_x, .. } = params else {
        return Err(JsError::new("unexpected parameter family"));
    };
    let x = grid(mu, var_xi + var_delta);
    to_json(&Attenuation {
        reliability: spec.reliability().unwrap_or(1.0),
        latent: x.iter().map(|&t| beta0 + beta1 * t + beta2 * t * t).collect(),
        observable: x.iter().map(|&t| params.mean_response(&[], &[t])[0]).collect(),
        x,
        beta1_x,
        beta2_x,
    })
}

#[allow(clippy::too_many_arguments)]
fn quadratic_spec(
    beta0: f64,
    beta1: f64,
    beta2: f64,
    k0: Option<f64>,
    mu: f64,
    var_xi: f64,
    var_delta: f64,
    var_e: f64,
) -> ModelSpec {
    ModelSpec::scalar(
        Family::Quadratic { beta0, beta1, beta2, k0 },
        mu,
        var_xi,
        ErrorStructure::equation_only(var_e, var_delta),
    )
}

#[derive(Serialize)]
struct Band {
    x: Vec<f64>,
    center: Vec<f64>,
    half_width: Vec<f64>,
    points_x: Vec<f64>,
    points_y: Vec<f64>,
    reliability: f64,
}

/// Simulates `n` points from a quadratic model, fits it, and returns the
/// fitted curve with its `1 − α` prediction band for reliability bound `k0`.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn quadratic_band(
    beta1: f64,
    beta2: f64,
    var_delta: f64,
    var_e: f64,
    k0: f64,
    alpha: f64,
    n: usize,
    seed: u64,
) -> Result<String, JsError> {
    let spec = quadratic_spec(0.0, beta1, beta2, Some(k0), 0.0, 1.0, var_delta, var_e);
    spec.ensure_valid().map_err(err)?;
    let data = sample(&spec, n, seed).map_err(err)?;
    let fitted = fit(&data, FitFamily::Polynomial { degree: 2 }).map_err(err)?;
    let x = grid(0.0, 1.0 + var_delta);
    let mut center = Vec::with_capacity(GRID);
    let mut half_width = Vec::with_capacity(GRID);
    for &t in &x {
        let pred = predict_individual(&fitted, &[], &[t]).map_err(err)?;
        let region = region_quadratic(&fitted, &pred, alpha, k0).map_err(err)?;
        center.push(pred.point[0]);
        half_width.push(region.threshold);
    }
    let step = (n / SCATTER).max(1);
    to_json(&Band {
        x,
        center,
        half_width,
        points_x: data.x.column(0).iter().step_by(step).copied().collect(),
        points_y: data.y.column(0).iter().step_by(step).copied().collect(),
        reliability: spec.reliability().unwrap_or(1.0),
    })
}

#[derive(Serialize)]
struct AbsComparison {
    x: Vec<f64>,
    best: Vec<f64>,
    least_squares: Vec<f64>,
    naive: Vec<f64>,
    mse_least_squares: f64,
    mse_naive: f64,
}

/// Best predictor for `y = β|ξ + a| + e` against the F-based least-squares
/// fit and the naive fit of `β|x + a|`, with their mean squared distance
/// from the best predictor over the grid.
#[wasm_bindgen]
pub fn abs_failure(beta: f64, shift: f64, var_delta: f64, n: usize, seed: u64) -> Result<String, JsError> {
    let spec = ModelSpec::scalar(
        Family::AbsoluteValue { beta, shift },
        0.0,
        1.0,
        ErrorStructure::equation_only(0.1, var_delta),
    );
    let params = transform(&spec).map_err(err)?;
    let data = sample(&spec, n, seed).map_err(err)?;
    let ls = fit(&data, FitFamily::AbsoluteValue).map_err(err)?;
    let naive = naive_ols_abs(&data).map_err(err)?;
    let x = grid(0.0, 1.0 + var_delta);
    let best: Vec<f64> = x.iter().map(|&t| params.mean_response(&[], &[t])[0]).collect();
    let least_squares: Vec<f64> = x.iter().map(|&t| ls.predict(&[], &[t])[0]).collect();
    let naive: Vec<f64> = x.iter().map(|&t| naive.predict(t)).collect();
    let mse = |v: &[f64]| v.iter().zip(&best).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / GRID as f64;
    to_json(&AbsComparison {
        mse_least_squares: mse(&least_squares),
        mse_naive: mse(&naive),
        x,
        best,
        least_squares,
        naive,
    })
}
