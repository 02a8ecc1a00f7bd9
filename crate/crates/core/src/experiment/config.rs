use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::estimators::{EstimatorConfig, EstimatorKind};

/// Top-level TOML document. Each subcommand reads its own section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub synth: Option<SynthConfig>,
    pub estimate: Option<EstimateConfig>,
    pub mse_bench: Option<MseBenchConfig>,
    pub anomaly: Option<AnomalyConfig>,
    pub spectrum: Option<SpectrumConfig>,
}

/// AR(1) temporal ⊗ AR(1) spatial truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub p: usize,
    pub t: usize,
    #[serde(default = "default_tcoeff")]
    pub tcoeff: f64,
    #[serde(default = "default_scoeff")]
    pub scoeff: f64,
}

fn default_tcoeff() -> f64 {
    0.5
}

fn default_scoeff() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub p: usize,
    pub t: usize,
    #[serde(default = "default_tcoeff")]
    pub tcoeff: f64,
    #[serde(default = "default_scoeff")]
    pub scoeff: f64,
    pub n: usize,
    /// Multivariate-t degrees of freedom; Gaussian when absent.
    pub dof: Option<f64>,
    #[serde(default = "default_samples_file")]
    pub output: String,
}

impl SynthConfig {
    pub fn truth(&self) -> TruthConfig {
        TruthConfig { p: self.p, t: self.t, tcoeff: self.tcoeff, scoeff: self.scoeff }
    }
}

fn default_samples_file() -> String {
    "samples.csv".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Sample CSV, relative to the config file.
    pub input: PathBuf,
    pub p: usize,
    pub t: usize,
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub config: EstimatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Name used in outputs; defaults to the estimator name.
    pub label: Option<String>,
    #[serde(default)]
    pub config: EstimatorConfig,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, config: EstimatorConfig) -> Self {
        Self { kind, label: None, config }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MseBenchConfig {
    pub p: usize,
    pub t: usize,
    #[serde(default = "default_tcoeff")]
    pub tcoeff: f64,
    #[serde(default = "default_scoeff")]
    pub scoeff: f64,
    pub dof: Option<f64>,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub estimators: Vec<EstimatorSpec>,
}

impl MseBenchConfig {
    pub fn truth(&self) -> TruthConfig {
        TruthConfig { p: self.p, t: self.t, tcoeff: self.tcoeff, scoeff: self.scoeff }
    }
}

fn default_trials() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticStream {
    pub p: usize,
    #[serde(default = "default_tcoeff")]
    pub tcoeff: f64,
    #[serde(default = "default_scoeff")]
    pub scoeff: f64,
    pub n_frames: usize,
    pub rate: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub label: Option<String>,
    pub estimator: EstimatorKind,
    pub t: usize,
    #[serde(default)]
    pub config: EstimatorConfig,
}

impl CurveSpec {
    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("{}_t{}", self.estimator.name(), self.t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyConfig {
    /// Frame CSV, relative to the config file. Exactly one of `input` and
    /// `synthetic` must be given.
    pub input: Option<PathBuf>,
    pub synthetic: Option<SyntheticStream>,
    #[serde(default)]
    pub train_start: usize,
    #[serde(default = "default_train_len")]
    pub train_len: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub linear_detrend: bool,
    /// Let test windows reuse training frames.
    #[serde(default)]
    pub allow_overlap: bool,
    pub curves: Vec<CurveSpec>,
}

fn default_train_len() -> usize {
    200
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Sample CSV, relative to the config file; requires `p` and `t`.
    pub input: Option<PathBuf>,
    pub p: Option<usize>,
    pub t: Option<usize>,
    /// Synthetic truth; with `n` the spectrum of its sample covariance,
    /// without it the spectrum of the truth itself.
    pub truth: Option<TruthConfig>,
    pub n: Option<usize>,
    #[serde(default = "default_true")]
    pub toeplitz: bool,
    #[serde(default = "default_energy")]
    pub energy: f64,
}

fn default_true() -> bool {
    true
}

fn default_energy() -> f64 {
    0.95
}
