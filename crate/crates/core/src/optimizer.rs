//! Small least-squares optimizers over scalar-covariate data: damped
//! Gauss–Newton (Levenberg–Marquardt) and Nelder–Mead simplex descent.

use nalgebra::{DMatrix, DVector};

pub const MAX_ITER: usize = 500;
pub const REL_TOL: f64 = 1e-12;

/// A regression function `f(θ, x)` with analytic gradient in `θ`.
pub trait LsModel {
    fn n_params(&self) -> usize;
    /// Returns `f(θ, x)` and writes `∂f/∂θ` into `grad`.
    fn eval(&self, theta: &[f64], x: f64, grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn objective<M: LsModel>(model: &M, theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let mut grad = vec![0.0; model.n_params()];
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - model.eval(theta, xi, &mut grad);
            r * r
        })
        .sum()
}

/// `JᵀJ`, `Jᵀr` and `Σr²` in one pass.
fn normal_equations<M: LsModel>(model: &M, theta: &[f64], x: &[f64], y: &[f64]) -> (DMatrix<f64>, DVector<f64>, f64) {
    let p = model.n_params();
    let mut jtj = DMatrix::zeros(p, p);
    let mut jtr = DVector::zeros(p);
    let mut sse = 0.0;
    let mut grad = vec![0.0; p];
    for (&xi, &yi) in x.iter().zip(y) {
        let r = yi - model.eval(theta, xi, &mut grad);
        sse += r * r;
        for a in 0..p {
            jtr[a] += grad[a] * r;
            for b in 0..=a {
                jtj[(a, b)] += grad[a] * grad[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            jtj[(b, a)] = jtj[(a, b)];
        }
    }
    (jtj, jtr, sse)
}

/// Marquardt-scaled damped Gauss–Newton. Stops when an accepted step lowers
/// the objective by less than `REL_TOL` relative, when the objective reaches
/// zero, or after `MAX_ITER` iterations (not converged).
pub fn levenberg_marquardt<M: LsModel>(model: &M, x: &[f64], y: &[f64], start: &[f64]) -> Outcome {
    let p = model.n_params();
    let mut theta = start.to_vec();
    let (mut jtj, mut jtr, mut sse) = normal_equations(model, &theta, x, y);
    if !sse.is_finite() {
        return Outcome { theta, objective: f64::INFINITY, iterations: 0, converged: false };
    }
    let mut lambda = 1e-3;
    for iter in 1..=MAX_ITER {
        if sse == 0.0 {
            return Outcome { theta, objective: 0.0, iterations: iter - 1, converged: true };
        }
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for k in 0..p {
                let d = jtj[(k, k)].max(1e-12 * (1.0 + jtj.diagonal().amax()));
                a[(k, k)] += lambda * d;
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            let trial_sse = objective(model, &trial, x, y);
            if trial_sse.is_finite() && trial_sse <= sse {
                let decrease = sse - trial_sse;
                theta = trial;
                let previous = sse;
                let near_gauss_newton = lambda <= 1.0;
                (jtj, jtr, sse) = normal_equations(model, &theta, x, y);
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                // heavily damped steps are short, so a small decrease there
                // says nothing about stationarity
                if decrease <= REL_TOL * previous && near_gauss_newton {
                    return Outcome { theta, objective: sse, iterations: iter, converged: true };
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point
            // up to rounding.
            let grad_norm = jtr.amax();
            let converged = grad_norm <= 1e-8 * (1.0 + sse.sqrt()) * (1.0 + jtj.diagonal().amax().sqrt());
            return Outcome { theta, objective: sse, iterations: iter, converged };
        }
    }
    Outcome { theta, objective: sse, iterations: MAX_ITER, converged: false }
}

/// Nelder–Mead with the standard coefficients (1, 2, 1/2, 1/2). Converged
/// when the simplex's objective spread falls below `REL_TOL` relative.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, start: &[f64], initial_step: &[f64]) -> Outcome {
    let p = start.len();
    let eval = |v: &[f64]| {
        let value = f(v);
        if value.is_nan() {
            f64::INFINITY
        } else {
            value
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(p + 1);
    simplex.push((start.to_vec(), eval(start)));
    for k in 0..p {
        let mut v = start.to_vec();
        v[k] += initial_step[k];
        let fv = eval(&v);
        simplex.push((v, fv));
    }
    for iter in 1..=MAX_ITER {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[p].1;
        if (worst - best).abs() <= REL_TOL * best.abs() + f64::MIN_POSITIVE {
            return Outcome { theta: simplex[0].0.clone(), objective: best, iterations: iter, converged: true };
        }
        let centroid: Vec<f64> =
            (0..p).map(|k| simplex[..p].iter().map(|(v, _)| v[k]).sum::<f64>() / p as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[p].0).map(|(c, w)| c + t * (c - w)).collect()
        };
        let reflected = along(1.0);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(2.0);
            let fe = eval(&expanded);
            simplex[p] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[p - 1].1 {
            simplex[p] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < worst {
                let c = along(0.5);
                let fc = eval(&c);
                (c, fc)
            } else {
                let c = along(-0.5);
                let fc = eval(&c);
                (c, fc)
            };
            if fc < worst.min(fr) {
                simplex[p] = (contracted, fc);
            } else {
                let best_v = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = best_v.iter().zip(&entry.0).map(|(b, w)| b + 0.5 * (w - b)).collect();
                    let fv = eval(&v);
                    *entry = (v, fv);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Outcome { theta: simplex[0].0.clone(), objective: simplex[0].1, iterations: MAX_ITER, converged: false }
}
