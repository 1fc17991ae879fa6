//! Configuration-driven experiments: Monte Carlo bias tables, optimisation
//! path bundles, Toeplitz convergence studies and contamination-shift
//! studies.
//!
//! Every experiment is a single JSON document whose defaults reproduce the
//! standard protocol (Brune model, θ* = (1,1,1), n = 1024, 100 replications,
//! fixed step 0.005, at most 10000 steps, gradient tolerance 1e-3, Daniell
//! spans (3, 5)). Outputs are deterministic functions of the configuration
//! and the master seed.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{
    contamination_shift, gaussian_gamma_finite, gaussian_renyi_finite, renyi_continuous_default, DivergenceSpec,
};
use crate::error::{invalid, Error, Result};
use crate::io::{fmt_f64, indexed, write_csv, write_json, CsvRecord, Row};
use crate::models::{Ar1Model, Ar1Params, ModelKind, ModelSpectrum, SpectralModel};
use crate::optimize::{gd_armijo, gd_fixed, Objective, OptimPath, Protocol, StepRule, StopCriteria, StopReason};
use crate::sampling::{
    inject_trend, periodogram, smooth_daniell, GaussianSampler, Phase, RngStream, TrendComponent, RNG_ALGORITHM,
};
use crate::spectral::{FreqGrid, SpectrumSamples};

/// Threshold above which a bias cell is flagged, mirroring the tables'
/// asterisk convention.
pub const FLAG_THRESHOLD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PilotKind {
    /// The raw periodogram.
    Raw,
    /// The modified-Daniell smoothed periodogram.
    Smoothed,
}

impl PilotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PilotKind::Raw => "raw",
            PilotKind::Smoothed => "smoothed",
        }
    }
}

impl std::str::FromStr for PilotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(PilotKind::Raw),
            "smoothed" => Ok(PilotKind::Smoothed),
            _ => Err(invalid(format!("unknown pilot kind {s:?}"))),
        }
    }
}

/// A divergence (α = 1 is Itakura–Saito) paired with a pilot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub alpha: f64,
    pub pilot: PilotKind,
}

impl EstimatorSpec {
    pub fn renyi(alpha: f64) -> Self {
        Self {
            alpha,
            pilot: PilotKind::Smoothed,
        }
    }

    pub fn itakura_saito(pilot: PilotKind) -> Self {
        Self { alpha: 1.0, pilot }
    }

    /// `R(0.50)/smoothed`, `IS/raw`, ...
    pub fn label(&self) -> String {
        if self.alpha == 1.0 {
            format!("IS/{}", self.pilot.as_str())
        } else {
            format!("R({:.2})/{}", self.alpha, self.pilot.as_str())
        }
    }

    pub fn divergence(&self) -> Result<DivergenceSpec> {
        DivergenceSpec::new(self.alpha)
    }
}

/// The step protocol and stopping rule shared by every run of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub protocol: Protocol,
    pub stop: StopCriteria,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Fixed {
                steps: StepRule::Constant(0.005),
            },
            stop: StopCriteria::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn run(&self, theta0: &[f64], objective: &Objective) -> Result<OptimPath> {
        match &self.protocol {
            Protocol::Fixed { steps } => gd_fixed(theta0, objective, steps, self.stop),
            Protocol::Armijo { config } => gd_armijo(theta0, objective, config, self.stop),
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    /// Used when no output directory is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    MonteCarlo(MonteCarloConfig),
    Paths(PathsConfig),
    SzegoConvergence(SzegoConfig),
    ShiftStudy(ShiftConfig),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::MonteCarlo(_) => "monte-carlo",
            Experiment::Paths(_) => "paths",
            Experiment::SzegoConvergence(_) => "szego-convergence",
            Experiment::ShiftStudy(_) => "shift-study",
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.experiment {
            Experiment::MonteCarlo(c) => c.validate(),
            Experiment::Paths(c) => c.validate(),
            Experiment::SzegoConvergence(c) => c.validate(),
            Experiment::ShiftStudy(c) => c.validate(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub model: ModelKind,
    /// True parameter in optimisation coordinates.
    pub theta_star: Vec<f64>,
    pub n: usize,
    pub replications: usize,
    /// Explicit stream ids, one per replication; defaults to `0..replications`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream_ids: Option<Vec<u64>>,
    pub estimators: Vec<EstimatorSpec>,
    pub inits: Vec<Vec<f64>>,
    /// Periodic components added to each simulated series.
    pub trends: Vec<TrendComponent>,
    pub spans: Vec<usize>,
    pub optimizer: OptimizerConfig,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Brune,
            theta_star: vec![1.0, 1.0, 1.0],
            n: 1024,
            replications: 100,
            stream_ids: None,
            estimators: vec![
                EstimatorSpec::renyi(0.5),
                EstimatorSpec::renyi(0.75),
                EstimatorSpec::renyi(0.9),
                EstimatorSpec::itakura_saito(PilotKind::Raw),
                EstimatorSpec::itakura_saito(PilotKind::Smoothed),
            ],
            inits: vec![vec![1.0, 0.1, 1.0], vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 1.0]],
            trends: Vec::new(),
            spans: vec![3, 5],
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl MonteCarloConfig {
    /// The two-trend contamination at π/4 and π/8 with mass `z` each.
    pub fn with_standard_trends(mut self, z: f64) -> Self {
        self.trends = vec![
            TrendComponent::new(z, PI / 4.0, Phase::Sin),
            TrendComponent::new(z, PI / 8.0, Phase::Sin),
        ];
        self
    }

    pub fn stream_ids(&self) -> Vec<u64> {
        self.stream_ids
            .clone()
            .unwrap_or_else(|| (0..self.replications as u64).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model.build();
        if self.replications == 0 {
            return Err(config_err("replication count must be at least 1"));
        }
        if let Some(ids) = &self.stream_ids {
            if ids.len() != self.replications {
                return Err(config_err(format!(
                    "{} stream ids for {} replications",
                    ids.len(),
                    self.replications
                )));
            }
        }
        if self.n < 4 {
            return Err(config_err("series length must be at least 4"));
        }
        if self.estimators.is_empty() || self.inits.is_empty() {
            return Err(config_err("need at least one estimator and one initial value"));
        }
        for e in &self.estimators {
            e.divergence().map_err(|err| config_err(err.to_string()))?;
        }
        for t in std::iter::once(&self.theta_star).chain(&self.inits) {
            if t.len() != model.dim() {
                return Err(config_err(format!(
                    "{:?} has {} parameters, got {t:?}",
                    self.model,
                    model.dim()
                )));
            }
            model.validate(t).map_err(|err| config_err(err.to_string()))?;
        }
        if self.estimators.iter().any(|e| e.pilot == PilotKind::Smoothed) {
            let width: usize = 2 * self.spans.iter().sum::<usize>() + 1;
            if self.spans.is_empty() || width >= self.n {
                return Err(config_err(format!(
                    "smoother spans {:?} do not fit n = {}",
                    self.spans, self.n
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// True AR(1) parameters (σ, ρ).
    pub sigma: f64,
    pub rho: f64,
    /// Starting point (σ, ρ).
    pub init_sigma: f64,
    pub init_rho: f64,
    pub n: usize,
    /// Contamination levels z: the series receives `√z·sin(ωt)`.
    pub z_ladder: Vec<f64>,
    pub trend_freq: f64,
    pub estimators: Vec<EstimatorSpec>,
    pub spans: Vec<usize>,
    pub optimizer: OptimizerConfig,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            rho: 0.5,
            init_sigma: 0.5,
            init_rho: -0.5,
            n: 1000,
            z_ladder: vec![0.0, 1e2, 1e4],
            trend_freq: PI / 2.0,
            estimators: vec![
                EstimatorSpec {
                    alpha: 0.5,
                    pilot: PilotKind::Raw,
                },
                EstimatorSpec::itakura_saito(PilotKind::Raw),
            ],
            spans: vec![3, 5],
            optimizer: OptimizerConfig {
                protocol: Protocol::Fixed {
                    steps: StepRule::Constant(0.01),
                },
                stop: StopCriteria {
                    max_iter: 5000,
                    grad_tol: 0.0,
                },
            },
        }
    }
}

impl PathsConfig {
    pub fn validate(&self) -> Result<()> {
        Ar1Params::from_natural(self.sigma, self.rho).map_err(|e| config_err(e.to_string()))?;
        Ar1Params::from_natural(self.init_sigma, self.init_rho).map_err(|e| config_err(e.to_string()))?;
        if self.n < 4 || self.z_ladder.is_empty() || self.estimators.is_empty() {
            return Err(config_err("paths need n ≥ 4, a z ladder and estimators"));
        }
        if self.z_ladder.iter().any(|z| !(*z >= 0.0 && z.is_finite())) {
            return Err(config_err("contamination levels must be finite and nonnegative"));
        }
        if !(self.trend_freq > 0.0 && self.trend_freq < PI) {
            return Err(config_err("trend frequency must lie in (0, π)"));
        }
        for e in &self.estimators {
            e.divergence().map_err(|err| config_err(err.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SzegoConfig {
    /// First spectrum, AR(1) (σ, ρ).
    pub first: (f64, f64),
    /// Second spectrum, AR(1) (σ, ρ).
    pub second: (f64, f64),
    pub alpha: f64,
    /// Defaults to `1/α − 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub n_ladder: Vec<usize>,
}

impl Default for SzegoConfig {
    fn default() -> Self {
        Self {
            first: (1.0, 0.5),
            second: (1.2, -0.3),
            alpha: 0.5,
            gamma: None,
            n_ladder: vec![64, 96, 128, 192, 256, 384, 512],
        }
    }
}

impl SzegoConfig {
    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(1.0 / self.alpha - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err("α must lie in (0, 1)"));
        }
        if !(self.gamma() > 0.0) {
            return Err(config_err("γ must be positive"));
        }
        for (s, r) in [self.first, self.second] {
            Ar1Params::from_natural(s, r).map_err(|e| config_err(e.to_string()))?;
        }
        if self.n_ladder.is_empty()
            || self
                .n_ladder
                .iter()
                .any(|n| !(2..=crate::linalg::DENSE_CAP).contains(n))
        {
            return Err(config_err(format!(
                "n ladder must be nonempty with entries in [2, {}]",
                crate::linalg::DENSE_CAP
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftConfig {
    /// AR(1) (σ, ρ) whose exact spectrum serves as the pilot.
    pub pilot: (f64, f64),
    /// Model parameters (σ, ρ) at which the shift is evaluated.
    pub thetas: Vec<(f64, f64)>,
    pub n: usize,
    pub omega: f64,
    pub z_ladder: Vec<f64>,
    pub alpha: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        let mut thetas = Vec::new();
        for s in [0.5, 1.0, 2.0] {
            for r in [-0.5, 0.0, 0.5] {
                thetas.push((s, r));
            }
        }
        Self {
            pilot: (1.0, 0.5),
            thetas,
            n: 1024,
            omega: PI / 4.0,
            z_ladder: vec![1.0, 1e2, 1e4, 1e6],
            alpha: 0.5,
        }
    }
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<()> {
        for &(s, r) in std::iter::once(&self.pilot).chain(&self.thetas) {
            Ar1Params::from_natural(s, r).map_err(|e| config_err(e.to_string()))?;
        }
        if self.thetas.is_empty() || self.z_ladder.is_empty() {
            return Err(config_err("shift study needs θ values and a z ladder"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err("α must lie in (0, 1)"));
        }
        let grid = FreqGrid::new(self.n, true).map_err(|e| config_err(e.to_string()))?;
        if grid.index_of(self.omega).is_none() {
            return Err(config_err(format!(
                "ω* = {} is not a Fourier frequency for n = {}",
                self.omega, self.n
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Running

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub rng: String,
    pub seed: u64,
    pub crate_version: String,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

/// What an experiment produced.
#[derive(Clone, Debug)]
pub enum ExperimentOutput {
    MonteCarlo(MonteCarloResult),
    Paths(PathsResult),
    Szego(SzegoResult),
    Shift(ShiftResult),
}

/// Runs an experiment with `workers` threads (all cores when `None`) and,
/// when `out` is given, writes its files and a manifest there.
pub fn run_experiment(
    config: &ExperimentConfig,
    out: Option<&Path>,
    workers: Option<usize>,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| config_err(format!("cannot start worker pool: {e}")))?;
    let seed = config.seed;
    let output = pool.install(|| -> Result<ExperimentOutput> {
        Ok(match &config.experiment {
            Experiment::MonteCarlo(c) => ExperimentOutput::MonteCarlo(run_monte_carlo(c, seed)?),
            Experiment::Paths(c) => ExperimentOutput::Paths(run_paths(c, seed)?),
            Experiment::SzegoConvergence(c) => ExperimentOutput::Szego(run_szego_convergence(c)?),
            Experiment::ShiftStudy(c) => ExperimentOutput::Shift(run_shift_study(c)?),
        })
    })?;
    if let Some(dir) = out.map(Path::to_path_buf).or_else(|| config.output_dir.clone()) {
        fs::create_dir_all(&dir)?;
        let files = output.write(&dir)?;
        let manifest = Manifest {
            kind: config.experiment.kind().to_string(),
            rng: RNG_ALGORITHM.to_string(),
            seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            files,
            config: config.clone(),
        };
        write_json(dir.join("manifest.json"), &manifest)?;
    }
    Ok(output)
}

impl ExperimentOutput {
    /// Writes the output files into `dir`, returning their names.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let mut files = Vec::new();
        let mut put = |name: &str| {
            files.push(name.to_string());
            dir.join(name)
        };
        match self {
            ExperimentOutput::MonteCarlo(r) => {
                write_csv(put("replications.csv"), &r.replications)?;
                write_csv(put("bias_table.csv"), &r.table.cells)?;
                write_json(put("bias_table.json"), &r.table)?;
            }
            ExperimentOutput::Paths(r) => {
                write_csv(put("paths.csv"), &r.rows)?;
                write_json(put("paths_summary.json"), &r.summary)?;
            }
            ExperimentOutput::Szego(r) => {
                write_csv(put("szego.csv"), &r.rows)?;
                write_json(put("szego_summary.json"), &r.summary)?;
            }
            ExperimentOutput::Shift(r) => {
                write_csv(put("shift.csv"), &r.rows)?;
                write_csv(put("shift_spread.csv"), &r.spread)?;
            }
        }
        Ok(files)
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo

/// One estimator run from one initial value on one replication.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationRow {
    pub stream_id: u64,
    pub estimator: String,
    pub alpha: f64,
    pub pilot: PilotKind,
    pub init_index: usize,
    pub theta_hat: Vec<f64>,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: Option<StopReason>,
    pub final_grad_norm: f64,
    pub objective: f64,
    /// Set when the run could not start or evaluate.
    pub error: Option<String>,
}

impl ReplicationRow {
    /// Runs that ended abnormally; excluded from the means and counted.
    pub fn is_flagged(&self) -> bool {
        self.error.is_some() || self.stop_reason.is_some_and(StopReason::is_failure)
    }
}

impl CsvRecord for ReplicationRow {
    fn headers(dim: usize) -> Vec<String> {
        let mut h: Vec<String> = ["stream_id", "estimator", "alpha", "pilot", "init_index"]
            .map(String::from)
            .into();
        h.extend(indexed("theta_hat", dim));
        h.extend(indexed("bias", dim));
        h.extend(["iterations", "stop_reason", "final_grad_norm", "objective", "error"].map(String::from));
        h
    }

    fn to_record(&self) -> Vec<String> {
        let mut r = vec![
            self.stream_id.to_string(),
            self.estimator.clone(),
            fmt_f64(self.alpha),
            self.pilot.as_str().to_string(),
            self.init_index.to_string(),
        ];
        r.extend(self.theta_hat.iter().map(|&v| fmt_f64(v)));
        r.extend(self.bias.iter().map(|&v| fmt_f64(v)));
        r.extend([
            self.iterations.to_string(),
            self.stop_reason.map(|s| s.to_string()).unwrap_or_default(),
            fmt_f64(self.final_grad_norm),
            fmt_f64(self.objective),
            self.error.clone().unwrap_or_default(),
        ]);
        r
    }

    fn from_record(row: &Row<'_>) -> Result<Self> {
        let error = row.str("error")?;
        Ok(Self {
            stream_id: row.parse("stream_id")?,
            estimator: row.str("estimator")?.to_string(),
            alpha: row.parse("alpha")?,
            pilot: row.parse("pilot")?,
            init_index: row.parse("init_index")?,
            theta_hat: row.vector("theta_hat")?,
            bias: row.vector("bias")?,
            iterations: row.parse("iterations")?,
            stop_reason: row.optional("stop_reason")?,
            final_grad_norm: row.parse("final_grad_norm")?,
            objective: row.parse("objective")?,
            error: (!error.is_empty()).then(|| error.to_string()),
        })
    }

    fn dim(&self) -> usize {
        self.bias.len()
    }
}

/// Mean and standard deviation of the bias for one (estimator, initial
/// value) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub estimator: String,
    pub alpha: f64,
    pub pilot: PilotKind,
    pub init_index: usize,
    pub init: Vec<f64>,
    /// Replications entering the statistics.
    pub used: usize,
    /// Replications excluded because the run failed.
    pub flagged: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// `|mean| > 10` per component.
    pub over_threshold: Vec<bool>,
}

impl CsvRecord for BiasCell {
    fn headers(dim: usize) -> Vec<String> {
        let mut h: Vec<String> = ["estimator", "alpha", "pilot", "init_index"].map(String::from).into();
        h.extend(indexed("init", dim));
        h.extend(["used", "flagged"].map(String::from));
        h.extend(indexed("mean", dim));
        h.extend(indexed("sd", dim));
        h.extend(indexed("over10", dim));
        h
    }

    fn to_record(&self) -> Vec<String> {
        let mut r = vec![
            self.estimator.clone(),
            fmt_f64(self.alpha),
            self.pilot.as_str().to_string(),
            self.init_index.to_string(),
        ];
        r.extend(self.init.iter().map(|&v| fmt_f64(v)));
        r.extend([self.used.to_string(), self.flagged.to_string()]);
        r.extend(self.mean.iter().map(|&v| fmt_f64(v)));
        r.extend(self.sd.iter().map(|&v| fmt_f64(v)));
        r.extend(self.over_threshold.iter().map(|b| b.to_string()));
        r
    }

    fn from_record(row: &Row<'_>) -> Result<Self> {
        let init = row.vector("init")?;
        let over_threshold = (1..=init.len())
            .map(|k| row.parse(&format!("over10_{k}")))
            .collect::<Result<_>>()?;
        Ok(Self {
            estimator: row.str("estimator")?.to_string(),
            alpha: row.parse("alpha")?,
            pilot: row.parse("pilot")?,
            init_index: row.parse("init_index")?,
            init,
            used: row.parse("used")?,
            flagged: row.parse("flagged")?,
            mean: row.vector("mean")?,
            sd: row.vector("sd")?,
            over_threshold,
        })
    }

    fn dim(&self) -> usize {
        self.init.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    pub replications: usize,
    pub theta_star: Vec<f64>,
    pub cells: Vec<BiasCell>,
}

impl BiasTable {
    pub fn cell(&self, estimator: &EstimatorSpec, init_index: usize) -> Option<&BiasCell> {
        let label = estimator.label();
        self.cells
            .iter()
            .find(|c| c.estimator == label && c.init_index == init_index)
    }
}

#[derive(Clone, Debug)]
pub struct MonteCarloResult {
    pub replications: Vec<ReplicationRow>,
    pub table: BiasTable,
}

/// Bias table over independent replications. Each replication simulates
/// one series (shared by every estimator and initial value) from its own
/// random stream; failed runs are recorded, never fatal.
pub fn run_monte_carlo(config: &MonteCarloConfig, seed: u64) -> Result<MonteCarloResult> {
    config.validate()?;
    let model = config.model.build();
    let truth = ModelSpectrum::new(model.as_ref(), &config.theta_star)?;
    let sampler = GaussianSampler::new(&truth, config.n)?;
    let mut ids = config.stream_ids();
    ids.sort_unstable();

    let per_rep: Vec<Vec<ReplicationRow>> = ids
        .par_iter()
        .map(|&id| replicate(config, &model, &sampler, RngStream::new(seed, id)))
        .collect::<Result<_>>()?;
    let rows: Vec<ReplicationRow> = per_rep.into_iter().flatten().collect();
    let table = bias_table(config, &rows);
    Ok(MonteCarloResult {
        replications: rows,
        table,
    })
}

fn replicate(
    config: &MonteCarloConfig,
    model: &Arc<dyn SpectralModel>,
    sampler: &GaussianSampler,
    stream: RngStream,
) -> Result<Vec<ReplicationRow>> {
    let mut x = sampler.sample(&stream);
    if !config.trends.is_empty() {
        x = inject_trend(&x, &config.trends)?;
    }
    let raw = periodogram(&x);
    let smoothed = if config.estimators.iter().any(|e| e.pilot == PilotKind::Smoothed) {
        Some(smooth_daniell(&raw, &config.spans)?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(config.estimators.len() * config.inits.len());
    for est in &config.estimators {
        let pilot = match est.pilot {
            PilotKind::Raw => &raw,
            PilotKind::Smoothed => smoothed.as_ref().expect("smoothed pilot computed"),
        };
        let objective = Objective::new(pilot, model.clone(), est.divergence()?);
        for (k, init) in config.inits.iter().enumerate() {
            let run = objective
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|obj| config.optimizer.run(init, obj).map_err(|e| e.to_string()));
            let mut row = ReplicationRow {
                stream_id: stream.stream_id,
                estimator: est.label(),
                alpha: est.alpha,
                pilot: est.pilot,
                init_index: k,
                theta_hat: vec![f64::NAN; init.len()],
                bias: vec![f64::NAN; init.len()],
                iterations: 0,
                stop_reason: None,
                final_grad_norm: f64::NAN,
                objective: f64::NAN,
                error: None,
            };
            match run {
                Ok(path) => {
                    row.theta_hat = path.last().to_vec();
                    row.bias = row
                        .theta_hat
                        .iter()
                        .zip(&config.theta_star)
                        .map(|(a, b)| a - b)
                        .collect();
                    row.iterations = path.iterations();
                    row.stop_reason = Some(path.stop_reason);
                    row.final_grad_norm = path.final_grad_norm();
                    row.objective = *path.objective.last().expect("nonempty path");
                }
                Err(e) => row.error = Some(e),
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Aggregates replication rows into per-cell means and standard deviations.
/// Rows are ordered by stream id first so the sums do not depend on the
/// order in which replications finished.
pub fn bias_table(config: &MonteCarloConfig, rows: &[ReplicationRow]) -> BiasTable {
    let mut cells = Vec::new();
    for est in &config.estimators {
        let label = est.label();
        for (k, init) in config.inits.iter().enumerate() {
            let mut sel: Vec<&ReplicationRow> = rows
                .iter()
                .filter(|r| r.estimator == label && r.init_index == k)
                .collect();
            sel.sort_by_key(|r| r.stream_id);
            let flagged = sel.iter().filter(|r| r.is_flagged()).count();
            let used: Vec<&ReplicationRow> = sel.into_iter().filter(|r| !r.is_flagged()).collect();
            let d = init.len();
            let (mean, sd) = mean_sd(&used.iter().map(|r| r.bias.as_slice()).collect::<Vec<_>>(), d);
            cells.push(BiasCell {
                estimator: label.clone(),
                alpha: est.alpha,
                pilot: est.pilot,
                init_index: k,
                init: init.clone(),
                used: used.len(),
                flagged,
                over_threshold: mean.iter().map(|m| m.abs() > FLAG_THRESHOLD).collect(),
                mean,
                sd,
            });
        }
    }
    BiasTable {
        replications: config.replications,
        theta_star: config.theta_star.clone(),
        cells,
    }
}

/// Componentwise mean and sample standard deviation.
fn mean_sd(values: &[&[f64]], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = values.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| values.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    let sd = (0..d)
        .map(|j| {
            if values.len() < 2 {
                return f64::NAN;
            }
            let ss: f64 = values.iter().map(|v| (v[j] - mean[j]).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect();
    (mean, sd)
}

// ---------------------------------------------------------------------------
// Optimisation paths

/// `(θ1, 2{1/(1+e^{−θ2}) − 1/2})`, i.e. `(log σ, ρ)` for the AR(1)
/// coordinates.
pub fn plot_coordinates(theta: &[f64]) -> (f64, f64) {
    (theta[0], 2.0 * (1.0 / (1.0 + (-theta[1]).exp()) - 0.5))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathPointRow {
    pub estimator: String,
    pub z: f64,
    pub iter: usize,
    pub theta: Vec<f64>,
    pub plot_x: f64,
    pub plot_y: f64,
    pub grad_norm: f64,
    pub objective: f64,
}

impl CsvRecord for PathPointRow {
    fn headers(dim: usize) -> Vec<String> {
        let mut h: Vec<String> = ["estimator", "z", "iter"].map(String::from).into();
        h.extend(indexed("theta", dim));
        h.extend(["plot_x", "plot_y", "grad_norm", "objective"].map(String::from));
        h
    }

    fn to_record(&self) -> Vec<String> {
        let mut r = vec![self.estimator.clone(), fmt_f64(self.z), self.iter.to_string()];
        r.extend(self.theta.iter().map(|&v| fmt_f64(v)));
        r.extend([self.plot_x, self.plot_y, self.grad_norm, self.objective].map(fmt_f64));
        r
    }

    fn from_record(row: &Row<'_>) -> Result<Self> {
        Ok(Self {
            estimator: row.str("estimator")?.to_string(),
            z: row.parse("z")?,
            iter: row.parse("iter")?,
            theta: row.vector("theta")?,
            plot_x: row.parse("plot_x")?,
            plot_y: row.parse("plot_y")?,
            grad_norm: row.parse("grad_norm")?,
            objective: row.parse("objective")?,
        })
    }

    fn dim(&self) -> usize {
        self.theta.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEndpoint {
    pub z: f64,
    pub theta: Vec<f64>,
    pub plot: (f64, f64),
    pub iterations: usize,
    pub stop_reason: StopReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorPaths {
    pub estimator: String,
    pub endpoints: Vec<PathEndpoint>,
    /// Largest pairwise distance between endpoints in plot coordinates.
    pub spread: f64,
}

#[derive(Clone, Debug)]
pub struct PathsResult {
    pub paths: Vec<(String, f64, OptimPath)>,
    pub rows: Vec<PathPointRow>,
    pub summary: Vec<EstimatorPaths>,
}

/// Descent paths on one simulated AR(1) series contaminated by
/// `√z·sin(ωt)` for each z of the ladder.
pub fn run_paths(config: &PathsConfig, seed: u64) -> Result<PathsResult> {
    config.validate()?;
    let truth = Ar1Params::from_natural(config.sigma, config.rho)?.to_vec();
    let theta0 = Ar1Params::from_natural(config.init_sigma, config.init_rho)?.to_vec();
    let model: Arc<dyn SpectralModel> = Arc::new(Ar1Model);
    let spectrum = ModelSpectrum::new(model.as_ref(), &truth)?;
    let x = GaussianSampler::new(&spectrum, config.n)?.sample(&RngStream::new(seed, 0));

    let jobs: Vec<(EstimatorSpec, f64)> = config
        .estimators
        .iter()
        .flat_map(|e| config.z_ladder.iter().map(move |&z| (*e, z)))
        .collect();
    let paths: Vec<(String, f64, OptimPath)> = jobs
        .par_iter()
        .map(|&(est, z)| -> Result<_> {
            let mut trend = TrendComponent::new(z, config.trend_freq, Phase::Sin);
            trend.raw_amplitude = true;
            let y = inject_trend(&x, &[trend])?;
            let raw = periodogram(&y);
            let pilot = match est.pilot {
                PilotKind::Raw => raw,
                PilotKind::Smoothed => smooth_daniell(&raw, &config.spans)?,
            };
            let objective = Objective::new(&pilot, model.clone(), est.divergence()?)?;
            Ok((est.label(), z, config.optimizer.run(&theta0, &objective)?))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut summary: Vec<EstimatorPaths> = Vec::new();
    for (label, z, path) in &paths {
        for (k, theta) in path.iterates.iter().enumerate() {
            let (plot_x, plot_y) = plot_coordinates(theta);
            rows.push(PathPointRow {
                estimator: label.clone(),
                z: *z,
                iter: k,
                theta: theta.clone(),
                plot_x,
                plot_y,
                grad_norm: crate::models::norm(&path.gradients[k]),
                objective: path.objective[k],
            });
        }
        let endpoint = PathEndpoint {
            z: *z,
            theta: path.last().to_vec(),
            plot: plot_coordinates(path.last()),
            iterations: path.iterations(),
            stop_reason: path.stop_reason,
        };
        match summary.iter_mut().find(|s| &s.estimator == label) {
            Some(s) => s.endpoints.push(endpoint),
            None => summary.push(EstimatorPaths {
                estimator: label.clone(),
                endpoints: vec![endpoint],
                spread: 0.0,
            }),
        }
    }
    for s in &mut summary {
        s.spread = max_pairwise(&s.endpoints.iter().map(|e| e.plot).collect::<Vec<_>>());
    }
    Ok(PathsResult { paths, rows, summary })
}

fn max_pairwise(points: &[(f64, f64)]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Toeplitz convergence

#[derive(Clone, Debug, PartialEq)]
pub struct SzegoRow {
    pub n: usize,
    /// `(2/n)·` finite-n Gaussian Rényi divergence.
    pub renyi_gauss: f64,
    /// `(2/n)·` finite-n Gaussian γ-divergence.
    pub gamma_gauss: f64,
    /// Spectral Rényi divergence (quadrature).
    pub spectral: f64,
    pub renyi_error: f64,
    pub renyi_ratio: f64,
    pub gamma_ratio: f64,
    pub error: Option<String>,
}

impl CsvRecord for SzegoRow {
    fn headers(_: usize) -> Vec<String> {
        [
            "n",
            "renyi_gauss",
            "gamma_gauss",
            "spectral",
            "renyi_error",
            "renyi_ratio",
            "gamma_ratio",
            "error",
        ]
        .map(String::from)
        .into()
    }

    fn to_record(&self) -> Vec<String> {
        let mut r = vec![self.n.to_string()];
        r.extend(
            [
                self.renyi_gauss,
                self.gamma_gauss,
                self.spectral,
                self.renyi_error,
                self.renyi_ratio,
                self.gamma_ratio,
            ]
            .map(fmt_f64),
        );
        r.push(self.error.clone().unwrap_or_default());
        r
    }

    fn from_record(row: &Row<'_>) -> Result<Self> {
        let error = row.str("error")?;
        Ok(Self {
            n: row.parse("n")?,
            renyi_gauss: row.parse("renyi_gauss")?,
            gamma_gauss: row.parse("gamma_gauss")?,
            spectral: row.parse("spectral")?,
            renyi_error: row.parse("renyi_error")?,
            renyi_ratio: row.parse("renyi_ratio")?,
            gamma_ratio: row.parse("gamma_ratio")?,
            error: (!error.is_empty()).then(|| error.to_string()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SzegoSummary {
    pub alpha: f64,
    pub gamma: f64,
    /// Mean of `(2/n)G_γ / D_α` over the last three ladder points.
    pub observed_constant: f64,
    /// Their standard deviation.
    pub constant_sd: f64,
    pub stabilized: bool,
}

#[derive(Clone, Debug)]
pub struct SzegoResult {
    pub rows: Vec<SzegoRow>,
    pub summary: SzegoSummary,
}

/// Standard deviation below which the last three γ ratios count as
/// stabilised.
pub const STABILIZATION_SD: f64 = 0.01;

/// Finite-n Gaussian divergences scaled by `2/n` against the spectral
/// Rényi divergence along the n ladder.
pub fn run_szego_convergence(config: &SzegoConfig) -> Result<SzegoResult> {
    config.validate()?;
    let p1 = Ar1Params::from_natural(config.first.0, config.first.1)?.to_vec();
    let p2 = Ar1Params::from_natural(config.second.0, config.second.1)?.to_vec();
    let s1 = ModelSpectrum::new(&Ar1Model, &p1)?;
    let s2 = ModelSpectrum::new(&Ar1Model, &p2)?;
    let (alpha, gamma) = (config.alpha, config.gamma());
    let spectral = renyi_continuous_default(&s1, &s2, alpha)?;

    let rows: Vec<SzegoRow> = config
        .n_ladder
        .par_iter()
        .map(|&n| {
            let scale = 2.0 / n as f64;
            let both = gaussian_renyi_finite(&s1, &s2, alpha, n)
                .and_then(|r| gaussian_gamma_finite(&s1, &s2, gamma, n).map(|g| (r, g)));
            match both {
                Ok((r, g)) => {
                    let (r, g) = (scale * r, scale * g);
                    SzegoRow {
                        n,
                        renyi_gauss: r,
                        gamma_gauss: g,
                        spectral,
                        renyi_error: (r - spectral).abs(),
                        renyi_ratio: ratio(r, spectral),
                        gamma_ratio: ratio(g, spectral),
                        error: None,
                    }
                }
                Err(e) => SzegoRow {
                    n,
                    renyi_gauss: f64::NAN,
                    gamma_gauss: f64::NAN,
                    spectral,
                    renyi_error: f64::NAN,
                    renyi_ratio: f64::NAN,
                    gamma_ratio: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let tail: Vec<f64> = rows
        .iter()
        .rev()
        .filter(|r| r.error.is_none())
        .take(3)
        .map(|r| r.gamma_ratio)
        .collect();
    let observed_constant = tail.iter().sum::<f64>() / tail.len() as f64;
    let constant_sd = if tail.len() < 2 {
        f64::NAN
    } else {
        (tail.iter().map(|v| (v - observed_constant).powi(2)).sum::<f64>() / (tail.len() - 1) as f64).sqrt()
    };
    Ok(SzegoResult {
        rows,
        summary: SzegoSummary {
            alpha,
            gamma,
            observed_constant,
            constant_sd,
            stabilized: constant_sd < STABILIZATION_SD,
        },
    })
}

/// `a/b`, with `0/0 = 1` so equal spectra give unit ratios.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 && a.abs() < 1e-12 {
        1.0
    } else {
        a / b
    }
}

// ---------------------------------------------------------------------------
// Contamination shifts

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftRow {
    pub theta_index: usize,
    pub sigma: f64,
    pub rho: f64,
    pub z: f64,
    pub divergence: String,
    pub multiplicity: usize,
    pub exact: f64,
    pub predicted: f64,
    pub asymptotic: f64,
}

impl CsvRecord for ShiftRow {
    fn headers(_: usize) -> Vec<String> {
        [
            "theta_index",
            "sigma",
            "rho",
            "z",
            "divergence",
            "multiplicity",
            "exact",
            "predicted",
            "asymptotic",
        ]
        .map(String::from)
        .into()
    }

    fn to_record(&self) -> Vec<String> {
        vec![
            self.theta_index.to_string(),
            fmt_f64(self.sigma),
            fmt_f64(self.rho),
            fmt_f64(self.z),
            self.divergence.clone(),
            self.multiplicity.to_string(),
            fmt_f64(self.exact),
            fmt_f64(self.predicted),
            fmt_f64(self.asymptotic),
        ]
    }

    fn from_record(row: &Row<'_>) -> Result<Self> {
        Ok(Self {
            theta_index: row.parse("theta_index")?,
            sigma: row.parse("sigma")?,
            rho: row.parse("rho")?,
            z: row.parse("z")?,
            divergence: row.str("divergence")?.to_string(),
            multiplicity: row.parse("multiplicity")?,
            exact: row.parse("exact")?,
            predicted: row.parse("predicted")?,
            asymptotic: row.parse("asymptotic")?,
        })
    }
}

/// Range over θ of the exact shift at one z.
#[derive(Clone, Debug, PartialEq)]
pub struct SpreadRow {
    pub z: f64,
    pub renyi_spread: f64,
    pub is_spread: f64,
    pub ratio: f64,
}

impl CsvRecord for SpreadRow {
    fn headers(_: usize) -> Vec<String> {
        ["z", "renyi_spread", "is_spread", "ratio"].map(String::from).into()
    }

    fn to_record(&self) -> Vec<String> {
        [self.z, self.renyi_spread, self.is_spread, self.ratio]
            .map(fmt_f64)
            .into()
    }

    fn from_record(row: &Row<'_>) -> Result<Self> {
        Ok(Self {
            z: row.parse("z")?,
            renyi_spread: row.parse("renyi_spread")?,
            is_spread: row.parse("is_spread")?,
            ratio: row.parse("ratio")?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ShiftResult {
    pub rows: Vec<ShiftRow>,
    pub spread: Vec<SpreadRow>,
}

pub const RENYI_LABEL: &str = "renyi";
pub const IS_LABEL: &str = "itakura-saito";

/// Exact and predicted divergence shifts from contaminating the pilot at
/// ±ω*, for every (θ, z) pair.
pub fn run_shift_study(config: &ShiftConfig) -> Result<ShiftResult> {
    config.validate()?;
    let grid = FreqGrid::new(config.n, true)?;
    let p = Ar1Params::from_natural(config.pilot.0, config.pilot.1)?.to_vec();
    let pilot = SpectrumSamples::from_spectrum(grid, &ModelSpectrum::new(&Ar1Model, &p)?)?;
    let specs = [
        (RENYI_LABEL, DivergenceSpec::new(config.alpha)?),
        (IS_LABEL, DivergenceSpec::itakura_saito()),
    ];
    let mut rows = Vec::new();
    for (k, &(sigma, rho)) in config.thetas.iter().enumerate() {
        let theta = Ar1Params::from_natural(sigma, rho)?.to_vec();
        let model_value = Ar1Model.density(&theta, config.omega);
        for &z in &config.z_ladder {
            for (label, spec) in &specs {
                let r = contamination_shift(&pilot, model_value, config.omega, z, spec)?;
                rows.push(ShiftRow {
                    theta_index: k,
                    sigma,
                    rho,
                    z,
                    divergence: label.to_string(),
                    multiplicity: r.multiplicity,
                    exact: r.exact,
                    predicted: r.predicted,
                    asymptotic: r.asymptotic,
                });
            }
        }
    }
    let spread = config
        .z_ladder
        .iter()
        .map(|&z| {
            let range = |label: &str| {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.z == z && r.divergence == label)
                    .map(|r| r.exact)
                    .collect();
                v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
            };
            let (renyi_spread, is_spread) = (range(RENYI_LABEL), range(IS_LABEL));
            SpreadRow {
                z,
                renyi_spread,
                is_spread,
                ratio: renyi_spread / is_spread,
            }
        })
        .collect();
    Ok(ShiftResult { rows, spread })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_follow_protocol() {
        let cfg = ExperimentConfig::from_json(r#"{"kind":"monte-carlo","seed":7}"#).unwrap();
        let Experiment::MonteCarlo(mc) = &cfg.experiment else {
            panic!("wrong kind")
        };
        assert_eq!(mc.n, 1024);
        assert_eq!(mc.replications, 100);
        assert_eq!(mc.theta_star, vec![1.0, 1.0, 1.0]);
        assert_eq!(mc.spans, vec![3, 5]);
        assert_eq!(
            mc.optimizer.stop,
            StopCriteria {
                max_iter: 10_000,
                grad_tol: 1e-3
            }
        );
        assert_eq!(
            mc.optimizer.protocol,
            Protocol::Fixed {
                steps: StepRule::Constant(0.005)
            }
        );
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn config_errors() {
        for bad in [
            r#"{"kind":"monte-carlo","replications":0}"#,
            r#"{"kind":"monte-carlo","inits":[[1.0,1.0]]}"#,
            r#"{"kind":"nonsense"}"#,
            r#"{"kind":"shift-study","omega":0.3}"#,
            r#"{"kind":"szego-convergence","alpha":1.0}"#,
        ] {
            assert!(
                matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn plot_coordinates_recover_rho() {
        let t = Ar1Params::from_natural(2.0, -0.3).unwrap().to_vec();
        let (x, y) = plot_coordinates(&t);
        assert!((x - 2f64.ln()).abs() < 1e-15);
        assert!((y + 0.3).abs() < 1e-12);
    }

    #[test]
    fn labels() {
        assert_eq!(EstimatorSpec::renyi(0.5).label(), "R(0.50)/smoothed");
        assert_eq!(EstimatorSpec::itakura_saito(PilotKind::Raw).label(), "IS/raw");
    }
}
