//! Monte Carlo experiments: consistency of the plug-in predictor, coverage
//! of the confidence regions, the naive-versus-F comparison for the
//! absolute-value model, and mean prediction.
//!
//! Replication `r` draws its training sample and its new subjects from
//! `replication_seed(master_seed, r)`, the same for every `n` in the grid,
//! so the samples for different `n` are nested and curves over `n` use common
//! random numbers. Replications run in parallel and are merged in index
//! order, so reports do not depend on the thread count.

use log::info;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, naive_ols_abs, nls_fit, FitFamily, InitStrategy};
use crate::io::{fmt_f64, to_json_string, SCHEMA_VERSION};
use crate::linalg::{self, SymMatrix};
use crate::models::{new_subject, new_subjects, sample, Family, ModelSpec};
use crate::predictors::{
    predict_individual, predict_mean, region_chebyshev, region_chisquare, region_contains, region_quadratic,
    RegionKind,
};
use crate::rng::{self, Domain};
use crate::transform::{condition_gaussian, transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Consistency,
    Coverage,
    AbsFailure,
    MeanPrediction,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Consistency => "consistency",
            Self::Coverage => "coverage",
            Self::AbsFailure => "abs-failure",
            Self::MeanPrediction => "mean-prediction",
        }
    }
}

/// A conditioning point held fixed across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedSubject {
    #[serde(default)]
    pub z0: Vec<f64>,
    pub x0: Vec<f64>,
}

/// A pass/fail threshold on report rows. Unset selectors match any value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub statistic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.05]
}

fn default_test_subjects() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub spec: ModelSpec,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; `None` uses the global pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Regions for coverage runs; empty selects a default for the family.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<RegionKind>,
    /// Reliability lower bound for the quadratic interval; defaults to the
    /// spec's `k0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    /// Assert pure normality for the chi-square region; defaults to what the
    /// spec implies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purely_normal: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_subject: Option<FixedSubject>,
    /// New subjects per replication for the absolute-value comparison.
    #[serde(default = "default_test_subjects")]
    pub test_subjects: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_family: Option<FitFamily>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<Check>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, spec: ModelSpec, n_grid: Vec<usize>, replications: usize) -> Self {
        Self {
            experiment,
            spec,
            n_grid,
            replications,
            alphas: default_alphas(),
            master_seed: 0,
            threads: None,
            regions: Vec::new(),
            k0: None,
            purely_normal: None,
            fixed_subject: None,
            test_subjects: default_test_subjects(),
            fit_family: None,
            checks: Vec::new(),
        }
    }

    pub fn fit_family(&self) -> FitFamily {
        self.fit_family.unwrap_or_else(|| FitFamily::for_spec(&self.spec))
    }

    fn k0(&self) -> Option<f64> {
        self.k0.or(match self.spec.regression {
            Family::Quadratic { k0, .. } => k0,
            _ => None,
        })
    }

    fn regions(&self) -> Vec<RegionKind> {
        if !self.regions.is_empty() {
            self.regions.clone()
        } else if matches!(self.spec.regression, Family::Quadratic { .. }) {
            vec![RegionKind::QuadraticI]
        } else {
            vec![RegionKind::ChebyshevE, RegionKind::ChisquareD]
        }
    }

    /// Lists every problem with the configuration.
    pub fn validate(&self) -> Vec<String> {
        let mut v: Vec<String> = self.spec.validate();
        if self.replications == 0 {
            v.push("replications must be at least 1".into());
        }
        if self.n_grid.is_empty() {
            v.push("n_grid must not be empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            v.push("n_grid must be strictly ascending".into());
        }
        if self.n_grid.iter().any(|&n| n < 2) {
            v.push("every n in n_grid must be at least 2".into());
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            v.push("alphas must be non-empty and lie in (0, 1)".into());
        }
        if self.threads == Some(0) {
            v.push("threads must be at least 1".into());
        }
        if self.test_subjects == 0 {
            v.push("test_subjects must be at least 1".into());
        }
        match self.experiment {
            ExperimentKind::AbsFailure => {
                if !matches!(self.spec.regression, Family::AbsoluteValue { .. }) {
                    v.push("abs-failure needs an absolute-value spec".into());
                }
            }
            ExperimentKind::Coverage => {
                if self.regions().contains(&RegionKind::QuadraticI) {
                    match self.k0() {
                        None => v.push("quadratic-i region needs k0 (in the config or the spec)".into()),
                        Some(k) if !(k > 0.0 && k <= 0.5) => v.push(format!("k0 must lie in (0, 1/2], got {k}")),
                        _ => {}
                    }
                    if self.fit_family() != (FitFamily::Polynomial { degree: 2 }) {
                        v.push("quadratic-i region needs a degree-2 polynomial fit".into());
                    }
                }
            }
            _ => {}
        }
        if let Some(fs) = &self.fixed_subject {
            if fs.z0.len() != self.spec.z_dim() || fs.x0.len() != self.spec.latent_dim() {
                v.push("fixed_subject dimensions do not match the spec".into());
            }
        }
        v
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let problems = self.validate();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Spec(problems))
        }
    }
}

/// One flat result: `(n, alpha, region, statistic) -> value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    pub statistic: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureNote {
    pub n: usize,
    pub replication: usize,
    pub error: String,
}

/// Experiment results plus the provenance needed to reproduce them. Timing
/// is deliberately absent so equal inputs give byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub schema_version: u32,
    pub generator: String,
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    pub replications: usize,
    pub n_grid: Vec<usize>,
    pub alphas: Vec<f64>,
    pub spec: ModelSpec,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureNote>,
}

impl McReport {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            generator: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            experiment: cfg.experiment,
            master_seed: cfg.master_seed,
            replications: cfg.replications,
            n_grid: cfg.n_grid.clone(),
            alphas: cfg.alphas.clone(),
            spec: cfg.spec.clone(),
            rows: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn push(&mut self, n: Option<usize>, alpha: Option<f64>, region: Option<RegionKind>, statistic: &str, value: f64) {
        self.rows.push(ReportRow {
            n,
            alpha,
            region: region.map(|r| r.name().to_string()),
            statistic: statistic.to_string(),
            value,
        });
    }

    /// First row matching all given selectors.
    pub fn value(&self, statistic: &str, n: Option<usize>, alpha: Option<f64>, region: Option<&str>) -> Option<f64> {
        self.rows.iter().find(|r| row_matches(r, statistic, n, alpha, region)).map(|r| r.value)
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_string(self)
    }

    /// `n,alpha,region,statistic,value` with empty fields for unset selectors.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,alpha,region,statistic,value\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n.map(|n| n.to_string()).unwrap_or_default(),
                r.alpha.map(fmt_f64).unwrap_or_default(),
                r.region.clone().unwrap_or_default(),
                r.statistic,
                fmt_f64(r.value)
            ));
        }
        out
    }
}

fn row_matches(r: &ReportRow, statistic: &str, n: Option<usize>, alpha: Option<f64>, region: Option<&str>) -> bool {
    r.statistic == statistic
        && n.is_none_or(|n| r.n == Some(n))
        && alpha.is_none_or(|a| r.alpha.is_some_and(|b| (a - b).abs() <= 1e-12))
        && region.is_none_or(|g| r.region.as_deref() == Some(g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: Check,
    /// The first out-of-range matching value, else the first match.
    pub value: Option<f64>,
    pub matched: usize,
    pub passed: bool,
}

/// A check passes when at least one row matches and every matching value is
/// within `[min, max]`.
pub fn evaluate_checks(report: &McReport, checks: &[Check]) -> Vec<CheckOutcome> {
    checks
        .iter()
        .map(|c| {
            let values: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| row_matches(r, &c.statistic, c.n, c.alpha, c.region.as_deref()))
                .map(|r| r.value)
                .collect();
            let in_range = |v: f64| c.min.is_none_or(|m| v >= m) && c.max.is_none_or(|m| v <= m) && !v.is_nan();
            let bad = values.iter().copied().find(|&v| !in_range(v));
            CheckOutcome {
                check: c.clone(),
                value: bad.or(values.first().copied()),
                matched: values.len(),
                passed: !values.is_empty() && bad.is_none(),
            }
        })
        .collect()
}

/// Evaluates `f` for indices `0..count`, in parallel when enabled, and
/// returns results in index order.
fn collect_ordered<T, F>(count: usize, threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let job = || (0..count).into_par_iter().map(&f).collect::<Vec<T>>();
        match threads {
            Some(t) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Error::InvalidInput(format!("cannot build thread pool: {e}")))?;
                Ok(pool.install(job))
            }
            None => Ok(job()),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok((0..count).map(f).collect())
    }
}

/// Runs `per_rep(n, seed)` for every `(n, replication)` pair.
fn run_grid<T, F>(cfg: &ExperimentConfig, per_rep: F) -> Result<Vec<Vec<Result<T>>>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync + Send,
{
    let reps = cfg.replications;
    let flat = collect_ordered(cfg.n_grid.len() * reps, cfg.threads, |task| {
        let (ni, r) = (task / reps, task % reps);
        per_rep(cfg.n_grid[ni], rng::replication_seed(cfg.master_seed, r as u64))
    })?;
    let mut out: Vec<Vec<Result<T>>> = Vec::with_capacity(cfg.n_grid.len());
    let mut it = flat.into_iter();
    for _ in &cfg.n_grid {
        out.push(it.by_ref().take(reps).collect());
    }
    Ok(out)
}

/// Splits results into successes and failure notes.
fn partition<T>(report: &mut McReport, n: usize, results: Vec<Result<T>>) -> Vec<T> {
    let mut ok = Vec::with_capacity(results.len());
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => ok.push(v),
            Err(e) => report.failures.push(FailureNote { n, replication: r, error: e.to_string() }),
        }
    }
    ok
}

/// Type-7 (linear interpolation) sample quantile; NaN for empty input.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Least-squares slope of `ln y` against `ln n`; NaN unless every value is
/// positive and there are at least two points.
pub fn log_log_slope(ns: &[usize], ys: &[f64]) -> f64 {
    if ns.len() < 2 || ns.len() != ys.len() || ys.iter().any(|y| !(*y > 0.0)) {
        return f64::NAN;
    }
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `(z₀, x₀, y₀, η₀)` for one replication: a fresh subject, or a draw of
/// `y₀` from its conditional law at the fixed point.
struct SubjectDraw {
    z0: Vec<f64>,
    x0: Vec<f64>,
    y0: Vec<f64>,
    eta0: Vec<f64>,
}

fn draw_subject(cfg: &ExperimentConfig, seed: u64) -> Result<SubjectDraw> {
    let spec = &cfg.spec;
    let Some(fixed) = &cfg.fixed_subject else {
        let s = new_subject(spec, seed)?;
        return Ok(SubjectDraw { z0: s.z0, x0: s.x0, y0: s.y0, eta0: s.eta0 });
    };
    // (ξ, ε) | x₀ is Gaussian; e is independent of everything else.
    let cg = condition_gaussian(spec)?;
    let (m, d) = (spec.latent_dim(), spec.response_dim());
    let mut rng = rng::stream(seed, Domain::Subject, 1, 0);
    let chol = linalg::cholesky(&SymMatrix::symmetrized(cg.v12.clone())?)?;
    let g = DVector::from_iterator(m + d, (0..m + d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let shock = chol * g;
    let mean_xi = cg.mean_xi(&fixed.x0);
    let mean_eps = cg.mean_eps(&fixed.x0);
    let xi: Vec<f64> = (0..m).map(|i| mean_xi[i] + shock[i]).collect();
    let chol_e = linalg::cholesky(&SymMatrix::symmetrized(spec.sigma_e())?)?;
    let ge = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let e = chol_e * ge;
    let eta0 = spec.regression_function(&fixed.z0, &xi);
    let y0 = (0..d).map(|j| eta0[j] + e[j] + mean_eps[j] + shock[m + j]).collect();
    Ok(SubjectDraw { z0: fixed.z0.clone(), x0: fixed.x0.clone(), y0, eta0 })
}

struct ConsistencyRep {
    abs_error: f64,
    rel_coef_error: f64,
}

/// Prediction error `‖ỹ₀ − ŷ₀‖` against the exact best predictor, and the
/// relative error of the fitted coefficients against the transformed ones.
pub fn run_consistency(cfg: &ExperimentConfig) -> Result<McReport> {
    cfg.ensure_valid()?;
    let params = transform(&cfg.spec)?;
    let family = cfg.fit_family();
    let truth = params.slope_vector();
    let results = run_grid(cfg, |n, seed| {
        let data = sample(&cfg.spec, n, seed)?;
        let fit = estimators::fit(&data, family)?;
        let s = draw_subject(cfg, seed)?;
        let pred = predict_individual(&fit, &s.z0, &s.x0)?;
        let best = params.mean_response(&s.z0, &s.x0);
        let est = fit.coefficients.slope_vector();
        let rel_coef_error = if est.len() == truth.len() {
            euclid(&est, &truth) / truth.iter().map(|v| v * v).sum::<f64>().sqrt()
        } else {
            f64::NAN
        };
        Ok(ConsistencyRep { abs_error: euclid(&pred.point, &best), rel_coef_error })
    })?;
    let mut report = McReport::new(cfg);
    let mut medians = Vec::new();
    let mut coef_medians = Vec::new();
    for (&n, res) in cfg.n_grid.iter().zip(results) {
        let ok = partition(&mut report, n, res);
        let errs: Vec<f64> = ok.iter().map(|r| r.abs_error).collect();
        let coef: Vec<f64> = ok.iter().map(|r| r.rel_coef_error).collect();
        let med = quantile(&errs, 0.5);
        medians.push(med);
        coef_medians.push(quantile(&coef, 0.5));
        report.push(Some(n), None, None, "median_abs_error", med);
        report.push(Some(n), None, None, "q10_abs_error", quantile(&errs, 0.1));
        report.push(Some(n), None, None, "q90_abs_error", quantile(&errs, 0.9));
        report.push(Some(n), None, None, "mean_abs_error", mean(&errs));
        report.push(Some(n), None, None, "max_abs_error", errs.iter().copied().fold(f64::NAN, f64::max));
        report.push(Some(n), None, None, "median_rel_coef_error", quantile(&coef, 0.5));
        report.push(Some(n), None, None, "failure_rate", 1.0 - ok.len() as f64 / cfg.replications as f64);
        info!("consistency n={n}: median error {med:.3e}");
    }
    report.push(None, None, None, "slope_median_abs_error", log_log_slope(&cfg.n_grid, &medians));
    report.push(None, None, None, "slope_median_rel_coef_error", log_log_slope(&cfg.n_grid, &coef_medians));
    Ok(report)
}

struct CoverageRep {
    /// Indexed `[alpha][region]`.
    covered: Vec<Vec<bool>>,
    threshold: Vec<Vec<f64>>,
}

/// Empirical coverage of each requested region at each `α`, with the
/// binomial standard error `√(p(1 − p)/reps)`.
pub fn run_coverage(cfg: &ExperimentConfig) -> Result<McReport> {
    cfg.ensure_valid()?;
    let family = cfg.fit_family();
    let regions = cfg.regions();
    let k0 = cfg.k0();
    let purely_normal = cfg.purely_normal.unwrap_or_else(|| cfg.spec.is_purely_normal());
    let results = run_grid(cfg, |n, seed| {
        let data = sample(&cfg.spec, n, seed)?;
        let fit = estimators::fit(&data, family)?;
        let s = draw_subject(cfg, seed)?;
        let pred = predict_individual(&fit, &s.z0, &s.x0)?;
        let mut covered = Vec::with_capacity(cfg.alphas.len());
        let mut threshold = Vec::with_capacity(cfg.alphas.len());
        for &alpha in &cfg.alphas {
            let mut c = Vec::with_capacity(regions.len());
            let mut t = Vec::with_capacity(regions.len());
            for kind in &regions {
                let region = match kind {
                    RegionKind::ChebyshevE => region_chebyshev(&fit, &pred, alpha)?,
                    RegionKind::ChisquareD => region_chisquare(&fit, &pred, alpha, purely_normal)?,
                    RegionKind::QuadraticI => {
                        region_quadratic(&fit, &pred, alpha, k0.expect("validated k0"))?
                    }
                };
                c.push(region_contains(&region, &s.y0)?);
                t.push(region.threshold);
            }
            covered.push(c);
            threshold.push(t);
        }
        Ok(CoverageRep { covered, threshold })
    })?;
    let mut report = McReport::new(cfg);
    for (&n, res) in cfg.n_grid.iter().zip(results) {
        let ok = partition(&mut report, n, res);
        let reps = ok.len() as f64;
        for (ai, &alpha) in cfg.alphas.iter().enumerate() {
            for (ri, &kind) in regions.iter().enumerate() {
                let hits = ok.iter().filter(|r| r.covered[ai][ri]).count() as f64;
                let p = if reps > 0.0 { hits / reps } else { f64::NAN };
                let thresholds: Vec<f64> = ok.iter().map(|r| r.threshold[ai][ri]).collect();
                report.push(Some(n), Some(alpha), Some(kind), "coverage", p);
                report.push(Some(n), Some(alpha), Some(kind), "coverage_se", (p * (1.0 - p) / reps).sqrt());
                report.push(Some(n), Some(alpha), Some(kind), "median_threshold", quantile(&thresholds, 0.5));
                info!("coverage n={n} alpha={alpha} {}: {p:.4}", kind.name());
            }
        }
        report.push(Some(n), None, None, "failure_rate", 1.0 - reps / cfg.replications as f64);
    }
    Ok(report)
}

#[derive(Default)]
struct AbsRep {
    count: f64,
    sum_gap: f64,
    sum_gap_sq: f64,
    sse_ls: f64,
    sse_naive: f64,
    sse_ls_y: f64,
    sse_naive_y: f64,
}

/// Out-of-sample squared error against the best predictor `ŷ₀` of the
/// F-based least-squares predictor and of the naive `β̂|x₀ + â|` predictor.
/// The gap's standard error comes from the spread of per-replication gaps,
/// or from the test subjects when there is a single replication.
pub fn run_abs_failure(cfg: &ExperimentConfig) -> Result<McReport> {
    cfg.ensure_valid()?;
    let params = transform(&cfg.spec)?;
    let results = run_grid(cfg, |n, seed| {
        let data = sample(&cfg.spec, n, seed)?;
        let ls = nls_fit(&data, FitFamily::AbsoluteValue, &InitStrategy::Heuristic)?;
        let naive = naive_ols_abs(&data)?;
        let mut acc = AbsRep::default();
        for s in new_subjects(&cfg.spec, cfg.test_subjects, seed)? {
            let best = params.mean_response(&[], &s.x0)[0];
            let a = ls.predict(&[], &s.x0)[0];
            let b = naive.predict(s.x0[0]);
            let (ea, eb) = ((a - best).powi(2), (b - best).powi(2));
            acc.count += 1.0;
            acc.sum_gap += eb - ea;
            acc.sum_gap_sq += (eb - ea).powi(2);
            acc.sse_ls += ea;
            acc.sse_naive += eb;
            acc.sse_ls_y += (a - s.y0[0]).powi(2);
            acc.sse_naive_y += (b - s.y0[0]).powi(2);
        }
        Ok(acc)
    })?;
    let mut report = McReport::new(cfg);
    let mut mse_ls = Vec::new();
    let mut mse_naive = Vec::new();
    for (&n, res) in cfg.n_grid.iter().zip(results) {
        let ok = partition(&mut report, n, res);
        let total = ok.iter().fold(AbsRep::default(), |mut t, r| {
            t.count += r.count;
            t.sum_gap += r.sum_gap;
            t.sum_gap_sq += r.sum_gap_sq;
            t.sse_ls += r.sse_ls;
            t.sse_naive += r.sse_naive;
            t.sse_ls_y += r.sse_ls_y;
            t.sse_naive_y += r.sse_naive_y;
            t
        });
        let c = total.count;
        let gap = total.sum_gap / c;
        let se = if ok.len() >= 2 {
            // Test subjects within a replication share one fit, so the
            // replication means are the independent units.
            let means: Vec<f64> = ok.iter().map(|r| r.sum_gap / r.count).collect();
            let m = mean(&means);
            let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
            (var / means.len() as f64).sqrt()
        } else {
            let var = ((total.sum_gap_sq - c * gap * gap) / (c - 1.0)).max(0.0);
            (var / c).sqrt()
        };
        mse_ls.push(total.sse_ls / c);
        mse_naive.push(total.sse_naive / c);
        report.push(Some(n), None, None, "mse_ls", total.sse_ls / c);
        report.push(Some(n), None, None, "mse_naive", total.sse_naive / c);
        report.push(Some(n), None, None, "mse_gap", gap);
        report.push(Some(n), None, None, "mse_gap_se", se);
        report.push(Some(n), None, None, "mse_gap_z", gap / se);
        report.push(Some(n), None, None, "mse_ls_y", total.sse_ls_y / c);
        report.push(Some(n), None, None, "mse_naive_y", total.sse_naive_y / c);
        report.push(Some(n), None, None, "failure_rate", 1.0 - ok.len() as f64 / cfg.replications as f64);
        info!("abs-failure n={n}: gap {gap:.4e} (se {se:.2e})");
    }
    report.push(None, None, None, "slope_mse_ls", log_log_slope(&cfg.n_grid, &mse_ls));
    report.push(None, None, None, "slope_mse_naive", log_log_slope(&cfg.n_grid, &mse_naive));
    Ok(report)
}

struct MeanRep {
    rel_error: f64,
    abs_error: f64,
    equal_to_individual: bool,
}

/// `η̃₀` from the fit against `η̂₀ = ŷ₀ − Σ_εδΣ_x⁻¹(x₀ − μ)` from the true
/// parameters.
pub fn run_mean_prediction(cfg: &ExperimentConfig) -> Result<McReport> {
    cfg.ensure_valid()?;
    let spec = &cfg.spec;
    let params = transform(spec)?;
    let family = cfg.fit_family();
    let cross = spec.sigma_eps_delta();
    let sigma_x_inv = linalg::inverse(&SymMatrix::symmetrized(spec.sigma_x())?)?.into_matrix();
    let results = run_grid(cfg, |n, seed| {
        let data = sample(spec, n, seed)?;
        let fit = estimators::fit(&data, family)?;
        let s = draw_subject(cfg, seed)?;
        let individual = predict_individual(&fit, &s.z0, &s.x0)?;
        let estimate = predict_mean(&fit, &s.z0, &s.x0, &cross)?;
        let centred = DVector::from_iterator(s.x0.len(), s.x0.iter().zip(&spec.xi_mean).map(|(a, b)| a - b));
        let shift = &cross * &sigma_x_inv * centred;
        let target: Vec<f64> =
            params.mean_response(&s.z0, &s.x0).iter().zip(shift.iter()).map(|(a, b)| a - b).collect();
        let abs_error = euclid(&estimate.point, &target);
        let norm = target.iter().map(|v| v * v).sum::<f64>().sqrt();
        let _ = &s.eta0;
        Ok(MeanRep {
            rel_error: abs_error / norm,
            abs_error,
            equal_to_individual: estimate.point == individual.point,
        })
    })?;
    let mut report = McReport::new(cfg);
    let mut medians = Vec::new();
    for (&n, res) in cfg.n_grid.iter().zip(results) {
        let ok = partition(&mut report, n, res);
        let rel: Vec<f64> = ok.iter().map(|r| r.rel_error).collect();
        let abs: Vec<f64> = ok.iter().map(|r| r.abs_error).collect();
        let equal = ok.iter().filter(|r| r.equal_to_individual).count() as f64;
        medians.push(quantile(&abs, 0.5));
        report.push(Some(n), None, None, "median_rel_error", quantile(&rel, 0.5));
        report.push(Some(n), None, None, "median_abs_error", quantile(&abs, 0.5));
        report.push(Some(n), None, None, "equal_to_individual_fraction", equal / ok.len().max(1) as f64);
        report.push(Some(n), None, None, "failure_rate", 1.0 - ok.len() as f64 / cfg.replications as f64);
    }
    report.push(None, None, None, "slope_median_abs_error", log_log_slope(&cfg.n_grid, &medians));
    Ok(report)
}

/// Dispatches on `cfg.experiment`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<McReport> {
    match cfg.experiment {
        ExperimentKind::Consistency => run_consistency(cfg),
        ExperimentKind::Coverage => run_coverage(cfg),
        ExperimentKind::AbsFailure => run_abs_failure(cfg),
        ExperimentKind::MeanPrediction => run_mean_prediction(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_and_slopes() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert!(quantile(&[], 0.5).is_nan());
        let ns = [100, 1000, 10000];
        let ys: Vec<f64> = ns.iter().map(|&n| 3.0 / (n as f64).sqrt()).collect();
        assert!((log_log_slope(&ns, &ys) + 0.5).abs() < 1e-12);
        assert!(log_log_slope(&ns, &[1.0, 0.0, 1.0]).is_nan());
    }

    #[test]
    fn checks_match_rows() {
        let mut report = McReport {
            schema_version: 1,
            generator: String::new(),
            experiment: ExperimentKind::Coverage,
            master_seed: 0,
            replications: 1,
            n_grid: vec![10],
            alphas: vec![0.05],
            spec: crate::models::ModelSpec::scalar(
                Family::Exponential { beta: 1.0, lambda: 0.0 },
                0.0,
                1.0,
                crate::models::ErrorStructure::equation_only(0.1, 1.0),
            ),
            rows: Vec::new(),
            failures: Vec::new(),
        };
        report.push(Some(10), Some(0.05), Some(RegionKind::ChisquareD), "coverage", 0.95);
        report.push(Some(20), Some(0.05), Some(RegionKind::ChisquareD), "coverage", 0.90);
        let check = |n: Option<usize>, min: f64| Check {
            statistic: "coverage".into(),
            n,
            alpha: Some(0.05),
            region: Some("chisquare-d".into()),
            min: Some(min),
            max: None,
        };
        let out = evaluate_checks(&report, &[check(Some(10), 0.93), check(None, 0.93), check(Some(30), 0.0)]);
        assert!(out[0].passed);
        assert!(!out[1].passed && out[1].value == Some(0.90) && out[1].matched == 2);
        assert!(!out[2].passed && out[2].matched == 0);
        let csv = report.to_csv();
        assert!(csv.starts_with("n,alpha,region,statistic,value\n10,5.0000000000000003e-2,chisquare-d,coverage,"));
    }
}
