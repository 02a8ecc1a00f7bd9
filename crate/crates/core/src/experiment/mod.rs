//! Experiment driver behind the `kroncov` binary: synthesis, estimation, the
//! Monte-Carlo MSE benchmark, Kronecker spectra and the windowed anomaly
//! pipeline.
//!
//! Every run is a pure function of its resolved config (seed included).
//! Outputs carry the SHA-256 of that config and the seed, and contain no
//! timestamps, so re-running a config reproduces its files byte for byte.

pub mod config;
pub mod io;

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    AnomalyConfig, CurveSpec, EstimateConfig, EstimatorSpec, ExperimentConfig, MseBenchConfig, SpectrumConfig,
    SynthConfig, SyntheticStream, TruthConfig,
};

use crate::anomaly::{detrend, mahalanobis_scores, make_windows, roc, ChunkLabel, FrameSeries, RocCurve};
use crate::error::KronError;
use crate::estimators::{energy_count, estimate, kron_spectrum, scm, Estimate, EstimatorKind, KronSpectrum};
use crate::kron_ops::{DenseCovariance, SpaceTimeDims};
use crate::linalg;
use crate::rng::mix_seed;
use crate::synth::{ar1_cov, ar_frame_series, inject_anomalies, paper_truth, sample_gaussian, sample_student_t, GroundTruth, SampleSet};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed input: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Kron(#[from] KronError),
}

impl ExperimentError {
    /// 1 for io failures, 2 for bad configs or inputs, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Io(_) => 1,
            ExperimentError::Config(_) | ExperimentError::Data(_) => 2,
            ExperimentError::Kron(e) => match e {
                KronError::InvalidParameter(_)
                | KronError::DimensionMismatch { .. }
                | KronError::InsufficientData { .. }
                | KronError::IndexOutOfRange(_) => 2,
                KronError::NotSymmetric { .. }
                | KronError::NotPositiveDefinite(_)
                | KronError::ZeroSample(_)
                | KronError::Numerical(_) => 3,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Config hash and seed stamped on every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn comment(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// SHA-256 of the config serialized as JSON in declaration order.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Estimate,
    MseBench,
    Anomaly,
    Spectrum,
}

/// A config with its seed resolved, plus where to read inputs and write outputs.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: ExperimentConfig,
    /// Relative input paths are resolved against this directory.
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
    pub prov: Provenance,
}

impl RunContext {
    pub fn new(mut config: ExperimentConfig, base_dir: PathBuf, out_dir: PathBuf, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            config.seed = s;
        }
        let prov = Provenance { config_hash: config_hash(&config), seed: config.seed };
        Self { config, base_dir, out_dir, prov }
    }

    fn input(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    fn output(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref()
        .ok_or_else(|| ExperimentError::Config(format!("missing [{name}] section")))
}

/// Runs one subcommand and returns the files it wrote.
pub fn run(cmd: Command, ctx: &RunContext) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&ctx.out_dir).map_err(|e| ExperimentError::Io(format!("{}: {e}", ctx.out_dir.display())))?;
    match cmd {
        Command::Synth => cmd_synth(ctx),
        Command::Estimate => cmd_estimate(ctx),
        Command::MseBench => cmd_mse_bench(ctx),
        Command::Anomaly => cmd_anomaly(ctx),
        Command::Spectrum => cmd_spectrum(ctx),
    }
}

fn truth_of(t: &TruthConfig) -> Result<GroundTruth> {
    Ok(paper_truth(t.p, t.t, t.tcoeff, t.scoeff)?)
}

fn draw(truth: &GroundTruth, dof: Option<f64>, n: usize, seed: u64) -> Result<SampleSet> {
    Ok(match dof {
        Some(d) => sample_student_t(truth, d, n, seed)?,
        None => sample_gaussian(truth, n, seed)?,
    })
}

#[derive(Serialize)]
struct SynthSidecar<'a> {
    config_hash: &'a str,
    seed: u64,
    p: usize,
    t: usize,
    n: usize,
    distribution: &'static str,
    dof: Option<f64>,
    truth: &'a str,
    samples_file: &'a str,
    truth_file: &'a str,
}

pub fn cmd_synth(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let cfg = section(&ctx.config.synth, "synth")?;
    if cfg.n == 0 {
        return Err(ExperimentError::Config("synth.n must be at least 1".into()));
    }
    let truth = truth_of(&cfg.truth())?;
    let set = draw(&truth, cfg.dof, cfg.n, ctx.prov.seed)?;
    let samples = ctx.output(&cfg.output);
    let stem = Path::new(&cfg.output).file_stem().and_then(|s| s.to_str()).unwrap_or("samples").to_string();
    let truth_file = format!("{stem}_truth.bin");
    let sidecar = ctx.output(&format!("{stem}.json"));
    io::write_samples_csv(&samples, &ctx.prov, &set)?;
    io::write_covariance_bin(&ctx.output(&truth_file), &ctx.prov, &truth.sigma)?;
    io::write_json(
        &sidecar,
        &SynthSidecar {
            config_hash: &ctx.prov.config_hash,
            seed: ctx.prov.seed,
            p: cfg.p,
            t: cfg.t,
            n: cfg.n,
            distribution: if cfg.dof.is_some() { "student-t" } else { "gaussian" },
            dof: cfg.dof,
            truth: &truth.description,
            samples_file: &cfg.output,
            truth_file: &truth_file,
        },
    )?;
    Ok(vec![samples, ctx.output(&truth_file), sidecar])
}

/// Summary statistics written alongside an estimate.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub config_hash: String,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub p: usize,
    pub t: usize,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    pub objective: Option<f64>,
    pub rho: Option<f64>,
    pub rho_method: Option<crate::estimators::IntensityMethod>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// `None` when the estimate is singular.
    pub condition_number: Option<f64>,
    pub trace: f64,
}

pub fn diagnostics(prov: &Provenance, est: &Estimate, n: usize) -> Diagnostics {
    let (lo, hi) = linalg::min_max_eigenvalue(est.sigma.matrix());
    let SpaceTimeDims { p, t } = est.sigma.dims();
    Diagnostics {
        config_hash: prov.config_hash.clone(),
        seed: prov.seed,
        estimator: est.kind,
        p,
        t,
        n,
        converged: est.converged,
        iterations: est.iterations,
        objective: est.objective,
        rho: est.rho.map(|r| r.rho),
        rho_method: est.rho.map(|r| r.method),
        min_eigenvalue: lo,
        max_eigenvalue: hi,
        condition_number: (lo > 0.0).then(|| hi / lo),
        trace: est.sigma.trace(),
    }
}

pub fn cmd_estimate(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let cfg = section(&ctx.config.estimate, "estimate")?;
    cfg.config.validate()?;
    let dims = SpaceTimeDims::new(cfg.p, cfg.t)?;
    let set = io::read_samples_csv(&ctx.input(&cfg.input), dims)?;
    let est = estimate(cfg.estimator, &set, &cfg.config)?;
    if !est.converged {
        log::warn!("{} did not converge within {} iterations", cfg.estimator, cfg.config.max_iter);
    }
    let mut written = vec![ctx.output("covariance.bin"), ctx.output("diagnostics.json")];
    io::write_covariance_bin(&written[0], &ctx.prov, &est.sigma)?;
    io::write_json(&written[1], &diagnostics(&ctx.prov, &est, set.n()))?;
    if let Some(model) = &est.model {
        let mut json = model.to_json();
        let obj = json.as_object_mut().expect("model serializes to an object");
        obj.insert("config_hash".into(), ctx.prov.config_hash.clone().into());
        obj.insert("seed".into(), ctx.prov.seed.into());
        let path = ctx.output("model.json");
        io::write_json(&path, &json)?;
        written.push(path);
    }
    Ok(written)
}

/// Normalized squared Frobenius error; shapes are compared at unit trace.
pub fn normalized_mse(estimate: &DMatrix<f64>, truth: &DMatrix<f64>, shape: bool) -> f64 {
    if shape {
        let a = estimate / estimate.trace();
        let b = truth / truth.trace();
        (&a - &b).norm_squared() / b.norm_squared()
    } else {
        (estimate - truth).norm_squared() / truth.norm_squared()
    }
}

/// Per-trial outcome of one benchmark cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub mse: f64,
    pub converged: bool,
}

/// Seed of trial `k` at sample size `n`, shared by every estimator so that
/// cells are paired.
pub fn trial_seed(seed: u64, n: usize, k: usize) -> u64 {
    mix_seed(seed, n as u64, k as u64)
}

/// Runs `bench.trials` independent trials of one estimator at sample size `n`.
/// The returned order follows the trial index, whatever the thread count.
pub fn mse_trials(bench: &MseBenchConfig, spec: &EstimatorSpec, n: usize, seed: u64) -> Result<Vec<TrialOutcome>> {
    spec.config.validate()?;
    let truth = truth_of(&bench.truth())?;
    (0..bench.trials)
        .into_par_iter()
        .map(|k| {
            let set = draw(&truth, bench.dof, n, trial_seed(seed, n, k))?;
            let est = estimate(spec.kind, &set, &spec.config)?;
            Ok(TrialOutcome {
                mse: normalized_mse(est.sigma.matrix(), truth.sigma.matrix(), spec.kind.is_shape()),
                converged: est.converged,
            })
        })
        .collect()
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct MseCell {
    pub estimator: String,
    pub kind: EstimatorKind,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub nonconverged: usize,
}

#[derive(Serialize)]
struct MseManifest<'a> {
    config_hash: &'a str,
    seed: u64,
    config: &'a MseBenchConfig,
    cells: &'a [MseCell],
}

pub fn mse_cells(bench: &MseBenchConfig, seed: u64) -> Result<Vec<MseCell>> {
    if bench.estimators.is_empty() {
        return Err(ExperimentError::Config("mse_bench.estimators is empty".into()));
    }
    if bench.trials == 0 || bench.n_grid.is_empty() {
        return Err(ExperimentError::Config("mse_bench needs trials >= 1 and a nonempty n_grid".into()));
    }
    let mut cells = Vec::new();
    for spec in &bench.estimators {
        for &n in &bench.n_grid {
            let outcomes = mse_trials(bench, spec, n, seed)?;
            let errs: Vec<f64> = outcomes.iter().map(|o| o.mse).collect();
            let (mean, stderr) = mean_stderr(&errs);
            cells.push(MseCell {
                estimator: spec.label(),
                kind: spec.kind,
                n,
                mean,
                stderr,
                trials: bench.trials,
                nonconverged: outcomes.iter().filter(|o| !o.converged).count(),
            });
        }
    }
    Ok(cells)
}

pub fn cmd_mse_bench(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let bench = section(&ctx.config.mse_bench, "mse_bench")?;
    let cells = mse_cells(bench, ctx.prov.seed)?;
    let csv = ctx.output("mse.csv");
    let header = ["estimator", "n", "mean", "stderr"].map(String::from);
    let rows = cells
        .iter()
        .map(|c| vec![c.estimator.clone(), c.n.to_string(), c.mean.to_string(), c.stderr.to_string()]);
    io::write_csv(&csv, &ctx.prov, &header, rows)?;
    let manifest = ctx.output("manifest.json");
    io::write_json(
        &manifest,
        &MseManifest { config_hash: &ctx.prov.config_hash, seed: ctx.prov.seed, config: bench, cells: &cells },
    )?;
    Ok(vec![csv, manifest])
}

/// AR(1) frame stream with anomalies injected everywhere except the training range.
pub fn synthetic_stream(s: &SyntheticStream, train: Range<usize>, seed: u64) -> Result<FrameSeries> {
    let base = ar_frame_series(&ar1_cov(s.p, s.scoeff)?, s.tcoeff, s.n_frames, seed)?;
    let mut out = inject_anomalies(&base, s.rate, s.magnitude, seed)?;
    let train = train.start..train.end.min(s.n_frames);
    let labels = out.labels.as_mut().expect("injected streams are labeled");
    labels[train.clone()].fill(0);
    for f in train {
        out.frames.set_column(f, &base.frames.column(f));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CurveResult {
    pub label: String,
    pub estimator: EstimatorKind,
    pub t: usize,
    pub roc: RocCurve,
    pub n_anomalous: usize,
    pub n_nominal: usize,
    pub n_excluded: usize,
    pub rho: Option<f64>,
    pub converged: bool,
}

#[derive(Serialize)]
struct AucSummary<'a> {
    config_hash: &'a str,
    seed: u64,
    label: &'a str,
    estimator: EstimatorKind,
    t: usize,
    auc: f64,
    n_anomalous: usize,
    n_nominal: usize,
    n_excluded: usize,
    rho: Option<f64>,
    converged: bool,
}

fn test_segments(cfg: &AnomalyConfig, len: usize) -> Vec<Range<usize>> {
    if cfg.allow_overlap {
        return std::iter::once(0..len).collect();
    }
    let end = cfg.train_start + cfg.train_len;
    vec![0..cfg.train_start, end..len]
}

/// Detrends on the training range, fits each curve's estimator on the training
/// windows and scores the test windows.
pub fn run_anomaly(cfg: &AnomalyConfig, series: &FrameSeries) -> Result<Vec<CurveResult>> {
    let train = cfg.train_start..cfg.train_start + cfg.train_len;
    if train.is_empty() || train.end > series.len() {
        return Err(ExperimentError::Config(format!(
            "training range {train:?} does not fit in {} frames",
            series.len()
        )));
    }
    if cfg.curves.is_empty() {
        return Err(ExperimentError::Config("anomaly.curves is empty".into()));
    }
    if train.clone().any(|f| series.label(f) == 1) {
        log::warn!("training range {train:?} contains frames labeled anomalous");
    }
    let clean = detrend(series, train.clone(), cfg.linear_detrend)?;
    let training = clean.slice(train.clone());
    let mut out = Vec::new();
    for curve in &cfg.curves {
        let dims = SpaceTimeDims::new(clean.p(), curve.t)?;
        let windows = make_windows(&training, curve.t, 1)?;
        let set = SampleSet::new(dims, windows.matrix(), None)?;
        let est = estimate(curve.estimator, &set, &curve.config)?;
        let (mut scores, mut labels) = (Vec::new(), Vec::new());
        let mut n_excluded = 0;
        for seg in test_segments(cfg, clean.len()) {
            if seg.len() < curve.t {
                continue;
            }
            let ws = make_windows(&clean.slice(seg), curve.t, cfg.stride)?;
            n_excluded += ws.count(ChunkLabel::Excluded);
            let kept = ws.filter(|w| w.label != ChunkLabel::Excluded);
            scores.extend(mahalanobis_scores(&kept, &est.sigma)?);
            labels.extend(kept.windows.iter().map(|w| w.label == ChunkLabel::Anomalous));
        }
        let curve_roc = roc(&scores, &labels)?;
        let n_anomalous = labels.iter().filter(|&&l| l).count();
        out.push(CurveResult {
            label: curve.label(),
            estimator: curve.estimator,
            t: curve.t,
            roc: curve_roc,
            n_anomalous,
            n_nominal: labels.len() - n_anomalous,
            n_excluded,
            rho: est.rho.map(|r| r.rho),
            converged: est.converged,
        });
    }
    Ok(out)
}

pub fn cmd_anomaly(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let cfg = section(&ctx.config.anomaly, "anomaly")?;
    let mut written = Vec::new();
    let series = match (&cfg.input, &cfg.synthetic) {
        (Some(path), None) => io::read_frames_csv(&ctx.input(path))?,
        (None, Some(s)) => {
            let series = synthetic_stream(s, cfg.train_start..cfg.train_start + cfg.train_len, ctx.prov.seed)?;
            let path = ctx.output("stream.csv");
            io::write_frames_csv(&path, &ctx.prov, &series)?;
            written.push(path);
            series
        }
        _ => return Err(ExperimentError::Config("anomaly needs exactly one of `input` and `synthetic`".into())),
    };
    if series.labels.is_none() {
        return Err(ExperimentError::Data("anomaly input has no `label` column".into()));
    }
    let curves = run_anomaly(cfg, &series)?;
    let header = ["threshold", "fpr", "tpr"].map(String::from);
    for c in &curves {
        let path = ctx.output(&format!("roc_{}.csv", c.label));
        let rows = (0..c.roc.thresholds.len())
            .map(|i| vec![c.roc.thresholds[i].to_string(), c.roc.fpr[i].to_string(), c.roc.tpr[i].to_string()]);
        io::write_csv(&path, &ctx.prov, &header, rows)?;
        written.push(path);
        let path = ctx.output(&format!("auc_{}.json", c.label));
        io::write_json(
            &path,
            &AucSummary {
                config_hash: &ctx.prov.config_hash,
                seed: ctx.prov.seed,
                label: &c.label,
                estimator: c.estimator,
                t: c.t,
                auc: c.roc.auc,
                n_anomalous: c.n_anomalous,
                n_nominal: c.n_nominal,
                n_excluded: c.n_excluded,
                rho: c.rho,
                converged: c.converged,
            },
        )?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    pub config_hash: String,
    pub seed: u64,
    pub toeplitz: bool,
    pub energy: f64,
    pub kron_count: usize,
    pub pca_count: usize,
}

/// Covariance whose spectrum `cmd_spectrum` reports.
pub fn spectrum_source(ctx: &RunContext, cfg: &SpectrumConfig) -> Result<DenseCovariance> {
    match (&cfg.input, &cfg.truth) {
        (Some(path), None) => {
            let (p, t) = cfg
                .p
                .zip(cfg.t)
                .ok_or_else(|| ExperimentError::Config("spectrum.input needs p and t".into()))?;
            Ok(scm(&io::read_samples_csv(&ctx.input(path), SpaceTimeDims::new(p, t)?)?)?)
        }
        (None, Some(truth)) => {
            let truth = truth_of(truth)?;
            match cfg.n {
                Some(n) => Ok(scm(&sample_gaussian(&truth, n, ctx.prov.seed)?)?),
                None => Ok(truth.sigma),
            }
        }
        _ => Err(ExperimentError::Config("spectrum needs exactly one of `input` and `truth`".into())),
    }
}

pub fn spectrum_counts(spec: &KronSpectrum, energy: f64) -> (usize, usize) {
    (energy_count(&spec.kron_sv, energy), energy_count(&spec.pca_ev, energy))
}

pub fn cmd_spectrum(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let cfg = section(&ctx.config.spectrum, "spectrum")?;
    if !(cfg.energy > 0.0 && cfg.energy <= 1.0) {
        return Err(ExperimentError::Config(format!("spectrum.energy {} outside (0, 1]", cfg.energy)));
    }
    let sigma = spectrum_source(ctx, cfg)?;
    let spec = kron_spectrum(&sigma, cfg.toeplitz);
    let (kron_count, pca_count) = spectrum_counts(&spec, cfg.energy);
    let csv = ctx.output("spectrum.csv");
    let len = spec.kron_sv.len().max(spec.pca_ev.len());
    let cell = |v: &[f64], i: usize| v.get(i).map(|x| x.to_string()).unwrap_or_default();
    let header = ["component", "kron_sv", "pca_ev"].map(String::from);
    let rows = (0..len).map(|i| vec![(i + 1).to_string(), cell(&spec.kron_sv, i), cell(&spec.pca_ev, i)]);
    io::write_csv(&csv, &ctx.prov, &header, rows)?;
    let summary = ctx.output("summary.json");
    io::write_json(
        &summary,
        &SpectrumSummary {
            config_hash: ctx.prov.config_hash.clone(),
            seed: ctx.prov.seed,
            toeplitz: cfg.toeplitz,
            energy: cfg.energy,
            kron_count,
            pca_count,
        },
    )?;
    Ok(vec![csv, summary])
}
