//! Config files for each command. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use anyhow::Context;
use eivpred::estimators::FitFamily;
use eivpred::models::{matrix_serde, Matrix, ModelSpec};
use eivpred::predictors::RegionKind;
use serde::de::DeserializeOwned;
use serde::Deserialize;

/// Marks errors that should exit with the config/spec code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub spec: ModelSpec,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// CSV path; the sidecar goes next to it with a `.json` extension.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Keep the latent draws as `hidden_*` columns.
    #[serde(default = "yes")]
    pub hidden: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    pub spec: ModelSpec,
    /// Points at which to report `Var(u|x)` for quadratic specs.
    #[serde(default)]
    pub variance_at: Vec<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    #[serde(default)]
    pub z0: Vec<f64>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitPredictConfig {
    /// Dataset CSV, relative to the config file.
    pub data: PathBuf,
    /// Overrides the spec from the dataset's sidecar.
    #[serde(default)]
    pub spec: Option<ModelSpec>,
    /// Defaults to the family matching the spec.
    #[serde(default)]
    pub fit_family: Option<FitFamily>,
    pub points: Vec<Point>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub regions: Vec<RegionKind>,
    #[serde(default)]
    pub k0: Option<f64>,
    #[serde(default)]
    pub purely_normal: Option<bool>,
    /// Also report the mean predictor, using this `Σ_εδ` or the spec's.
    #[serde(default)]
    pub mean: bool,
    #[serde(default, with = "matrix_serde::option")]
    pub sigma_eps_delta: Option<Matrix>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Resolves `p` against the directory holding the config file.
pub fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}
