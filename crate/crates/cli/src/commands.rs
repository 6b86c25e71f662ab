use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use eivpred::estimators::{self, FitFamily, FittedModel};
use eivpred::io::{self, DatasetSidecar, SCHEMA_VERSION};
use eivpred::models::{self, Family, ModelSpec};
use eivpred::montecarlo::{self, ExperimentConfig};
use eivpred::predictors::{self, ConfidenceRegion, RegionKind};
use eivpred::transform::{self, TransformedParams};
use serde::Serialize;

use crate::config::{self, ConfigError, FitPredictConfig, SimulateConfig, TransformConfig};
use crate::{Common, Outcome};

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn simulate(c: &Common) -> Result<Outcome> {
    let cfg: SimulateConfig = config::load(&c.config)?;
    let seed = c.seed.unwrap_or(cfg.seed);
    let out = c
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(|p| config::relative_to(&c.config, p)))
        .ok_or_else(|| ConfigError("simulate needs an output path (--out or \"out\")".into()))?;
    if out.extension().is_some_and(|e| e == "json") {
        return Err(ConfigError("the dataset path must not end in .json; that name is used for the sidecar".into()).into());
    }
    let mut data = models::sample(&cfg.spec, cfg.n, seed)?;
    if !cfg.hidden {
        data.hidden = None;
    }
    io::write_dataset_csv(&out, &data)?;
    let sidecar = DatasetSidecar { schema_version: SCHEMA_VERSION, n: cfg.n, seed, spec: Some(cfg.spec) };
    io::write_sidecar(&out.with_extension("json"), &sidecar)?;
    log::info!("wrote {} rows to {}", cfg.n, out.display());
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct VariancePoint {
    x: f64,
    var_u_given_x: f64,
    m_u2: f64,
    g: f64,
    bound: f64,
}

#[derive(Serialize)]
struct TransformReport {
    schema_version: u32,
    family: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reliability: Option<f64>,
    params: TransformedParams,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    quadratic_variance: Vec<VariancePoint>,
}

pub fn transform(c: &Common) -> Result<Outcome> {
    let cfg: TransformConfig = config::load(&c.config)?;
    let params = transform::transform(&cfg.spec)?;
    let mut quadratic_variance = Vec::new();
    if !cfg.variance_at.is_empty() {
        let Family::Quadratic { k0: Some(k0), .. } = cfg.spec.regression else {
            return Err(ConfigError("variance_at needs a quadratic spec with k0".into()).into());
        };
        let TransformedParams::Quadratic { sigma_x2, .. } = &params else { unreachable!() };
        for &x in &cfg.variance_at {
            let v = transform::transform_quadratic_variance(&cfg.spec, x)?;
            let bound = transform::variance_bound(v.m_u2, *sigma_x2, v.g, k0)?;
            quadratic_variance.push(VariancePoint { x, var_u_given_x: v.var_u_given_x, m_u2: v.m_u2, g: v.g, bound });
        }
    }
    let report = TransformReport {
        schema_version: SCHEMA_VERSION,
        family: cfg.spec.family_name(),
        reliability: cfg.spec.reliability(),
        params,
        quadratic_variance,
    };
    let out = c.out.clone().or_else(|| cfg.out.as_ref().map(|p| config::relative_to(&c.config, p)));
    emit(out.as_deref(), &io::to_json_string(&report)?)?;
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct PointReport {
    z0: Vec<f64>,
    x0: Vec<f64>,
    individual: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    regions: Vec<ConfidenceRegion>,
}

#[derive(Serialize)]
struct FitPredictReport {
    schema_version: u32,
    data: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    fit_family: FitFamily,
    fit: FittedModel,
    predictions: Vec<PointReport>,
}

fn default_regions(family: FitFamily, k0: Option<f64>) -> Vec<RegionKind> {
    if family == (FitFamily::Polynomial { degree: 2 }) && k0.is_some() {
        vec![RegionKind::QuadraticI, RegionKind::ChebyshevE]
    } else {
        vec![RegionKind::ChebyshevE, RegionKind::ChisquareD]
    }
}

pub fn fit_predict(c: &Common) -> Result<Outcome> {
    let cfg: FitPredictConfig = config::load(&c.config)?;
    let (data, sidecar) = io::read_dataset(&config::relative_to(&c.config, &cfg.data))?;
    let spec: Option<ModelSpec> = cfg.spec.clone().or_else(|| sidecar.as_ref().and_then(|s| s.spec.clone()));
    let family = cfg
        .fit_family
        .or_else(|| spec.as_ref().map(FitFamily::for_spec))
        .ok_or_else(|| ConfigError("fit_family is required when neither the config nor the sidecar has a spec".into()))?;
    let k0 = cfg.k0.or(match spec.as_ref().map(|s| &s.regression) {
        Some(Family::Quadratic { k0, .. }) => *k0,
        _ => None,
    });
    let purely_normal = cfg.purely_normal.unwrap_or_else(|| spec.as_ref().is_some_and(ModelSpec::is_purely_normal));
    let regions = if cfg.regions.is_empty() { default_regions(family, k0) } else { cfg.regions.clone() };
    let cross = if cfg.mean {
        Some(
            cfg.sigma_eps_delta
                .clone()
                .or_else(|| spec.as_ref().map(ModelSpec::sigma_eps_delta))
                .ok_or_else(|| ConfigError("mean prediction needs sigma_eps_delta or a spec".into()))?,
        )
    } else {
        None
    };

    let fit = estimators::fit(&data, family)?;
    for w in &fit.diagnostics.warnings {
        log::warn!("fit: {w}");
    }
    let mut predictions = Vec::with_capacity(cfg.points.len());
    for p in &cfg.points {
        let pred = predictors::predict_individual(&fit, &p.z0, &p.x0)?;
        let mean = match &cross {
            Some(s) => Some(predictors::predict_mean(&fit, &p.z0, &p.x0, s)?.point),
            None => None,
        };
        let mut out = Vec::new();
        for &alpha in &cfg.alphas {
            for kind in &regions {
                out.push(match kind {
                    RegionKind::ChebyshevE => predictors::region_chebyshev(&fit, &pred, alpha)?,
                    RegionKind::ChisquareD => predictors::region_chisquare(&fit, &pred, alpha, purely_normal)?,
                    RegionKind::QuadraticI => {
                        let k0 = k0.ok_or_else(|| ConfigError("quadratic-i region needs k0".into()))?;
                        predictors::region_quadratic(&fit, &pred, alpha, k0)?
                    }
                });
            }
        }
        predictions.push(PointReport { z0: p.z0.clone(), x0: p.x0.clone(), individual: pred.point, mean, regions: out });
    }
    let report = FitPredictReport {
        schema_version: SCHEMA_VERSION,
        data: cfg.data.clone(),
        seed: sidecar.map(|s| s.seed),
        fit_family: family,
        fit,
        predictions,
    };
    let out = c.out.clone().or_else(|| cfg.out.as_ref().map(|p| config::relative_to(&c.config, p)));
    emit(out.as_deref(), &io::to_json_string(&report)?)?;
    Ok(Outcome::Ok)
}

/// `base.ext`, dropping a trailing `.json` or `.csv` from `base` first.
fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let stem = match base.extension().and_then(|e| e.to_str()) {
        Some("json" | "csv") => base.with_extension(""),
        _ => base.to_path_buf(),
    };
    let mut s = stem.into_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn experiment(c: &Common, check: bool) -> Result<Outcome> {
    let mut cfg: ExperimentConfig = config::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.master_seed = seed;
    }
    if c.threads.is_some() {
        cfg.threads = c.threads;
    }
    if check && cfg.checks.is_empty() {
        return Err(ConfigError("--check given but the config defines no checks".into()).into());
    }
    let report = montecarlo::run_experiment(&cfg)?;
    for f in &report.failures {
        log::warn!("n = {} replication {} failed: {}", f.n, f.replication, f.error);
    }
    match &c.out {
        Some(base) => {
            io::write_json(&with_suffix(base, "json"), &report)?;
            std::fs::write(with_suffix(base, "csv"), report.to_csv())?;
        }
        None => emit(None, &report.to_json()?)?,
    }
    if !check {
        return Ok(Outcome::Ok);
    }
    let outcomes = montecarlo::evaluate_checks(&report, &cfg.checks);
    for o in &outcomes {
        let c = &o.check;
        let mut sel = String::new();
        if let Some(n) = c.n {
            sel.push_str(&format!(" n={n}"));
        }
        if let Some(a) = c.alpha {
            sel.push_str(&format!(" alpha={a}"));
        }
        if let Some(r) = &c.region {
            sel.push_str(&format!(" region={r}"));
        }
        let value = o.value.map_or("none".to_string(), io::fmt_f64);
        eprintln!(
            "check {}{sel}: {value} in [{}, {}] ({} rows) {}",
            c.statistic,
            c.min.map_or("-inf".into(), io::fmt_f64),
            c.max.map_or("inf".into(), io::fmt_f64),
            o.matched,
            if o.passed { "PASS" } else { "FAIL" }
        );
    }
    Ok(if outcomes.iter().all(|o| o.passed) { Outcome::Ok } else { Outcome::CheckFailed })
}
