use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use spectral_renyi::divergence::{divergence_discrete, DivergenceSpec};
use spectral_renyi::experiments::{run_experiment, ExperimentConfig, ExperimentOutput};
use spectral_renyi::io::{
    read_series_csv, read_spectrum_csv, write_json, write_path_csv, write_series_csv, write_spectrum_csv,
};
use spectral_renyi::models::{ModelConfig, ModelKind, ModelSpectrum};
use spectral_renyi::optimize::{gd_armijo, gd_fixed, ArmijoConfig, Objective, StepRule, StopCriteria};
use spectral_renyi::sampling::{periodogram, smooth_daniell, GaussianSampler, RngStream};
use spectral_renyi::spectral::{FreqGrid, SpectrumSamples};
use spectral_renyi::Error;

const WORKERS_ENV: &str = "SPECTRAL_RENYI_WORKERS";

#[derive(Parser)]
#[command(
    name = "spectral-renyi",
    version,
    about = "Spectral Rényi divergences and robust spectral estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Gaussian series from a parametric spectrum.
    Simulate(SimulateArgs),
    /// Periodogram (optionally Daniell-smoothed) of a series.
    Periodogram(PeriodogramArgs),
    /// Discrete divergence between a pilot and a model spectrum.
    Divergence(DivergenceArgs),
    /// Minimum-divergence estimate by gradient descent.
    Estimate(EstimateArgs),
    /// Run an experiment described by a JSON configuration.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelArgs {
    /// ar1, brune or brune-log.
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated parameters in optimisation coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    params: Option<Vec<f64>>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    stream: u64,
}

#[derive(Args)]
struct PeriodogramArgs {
    #[command(flatten)]
    common: Common,
    /// Series CSV (`t,x`).
    #[arg(long)]
    input: PathBuf,
    /// Daniell spans, e.g. `3,5`.
    #[arg(long, value_delimiter = ',')]
    smooth: Option<Vec<usize>>,
}

#[derive(Args)]
struct DivergenceArgs {
    #[command(flatten)]
    common: Common,
    /// Pilot spectrum CSV (`omega,value`).
    #[arg(long)]
    pilot: PathBuf,
    /// Second spectrum as CSV; alternatively give --model/--params.
    #[arg(long)]
    target: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Include ω = 0 in the sums.
    #[arg(long)]
    include_zero: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// Pilot spectrum CSV; alternatively --series.
    #[arg(long)]
    pilot: Option<PathBuf>,
    /// Series CSV whose periodogram is the pilot.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Daniell spans applied to the pilot.
    #[arg(long, value_delimiter = ',')]
    smooth: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value = "brune")]
    model: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    init: Vec<f64>,
    #[arg(long, default_value_t = 0.005)]
    step: f64,
    /// Armijo backtracking instead of a fixed step.
    #[arg(long)]
    armijo: bool,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-3)]
    grad_tol: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Periodogram(a) => periodogram_cmd(a),
        Command::Divergence(a) => divergence(a),
        Command::Estimate(a) => estimate(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn read_config(path: &Path) -> Result<serde_json::Value, Error> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn out_dir(common: &Common) -> Result<Option<&Path>, Error> {
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir)?;
    }
    Ok(common.out.as_deref())
}

fn print_json(value: &serde_json::Value) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// `--model/--params` flags, falling back to a `{model, params}` config.
fn model_config(args: &ModelArgs, config: Option<&serde_json::Value>) -> Result<ModelConfig, Error> {
    let from_file = config
        .map(|v| serde_json::from_value::<ModelConfig>(v.clone()))
        .transpose()
        .map_err(|e| config_error(e.to_string()))?;
    let model = match (&args.model, &from_file) {
        (Some(m), _) => m.parse::<ModelKind>().map_err(|e| config_error(e.to_string()))?,
        (None, Some(c)) => c.model,
        (None, None) => return Err(config_error("no model given (use --model or --config)")),
    };
    let params = match (&args.params, &from_file) {
        (Some(p), _) => p.clone(),
        (None, Some(c)) => c.params.clone(),
        (None, None) => return Err(config_error("no parameters given (use --params or --config)")),
    };
    Ok(ModelConfig { model, params })
}

fn simulate(a: SimulateArgs) -> Result<(), Error> {
    let cfg: Option<serde_json::Value> = a.common.config.as_deref().map(read_config).transpose()?;
    let mc = model_config(&a.model, cfg.as_ref())?;
    let model = mc.build().map_err(|e| config_error(e.to_string()))?;
    let n =
        a.n.or_else(|| {
            cfg.as_ref()
                .and_then(|c| c.get("n"))
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
        })
        .ok_or_else(|| config_error("no series length given (use --n)"))?;
    let seed = a
        .common
        .seed
        .or_else(|| cfg.as_ref().and_then(|c| c.get("seed")).and_then(|v| v.as_u64()))
        .unwrap_or(0);
    let spectrum = ModelSpectrum::new(model.as_ref(), &mc.params)?;
    let sampler = GaussianSampler::new(&spectrum, n)?;
    let x = sampler.sample(&RngStream::new(seed, a.stream));
    match out_dir(&a.common)? {
        Some(dir) => write_series_csv(dir.join("series.csv"), &x)?,
        None => {
            println!("t,x");
            for (t, v) in x.values().iter().enumerate() {
                println!("{},{v}", t + 1);
            }
        }
    }
    eprintln!(
        "simulated n = {n} with {} (seed {seed}, stream {})",
        sampler.method_name(),
        a.stream
    );
    Ok(())
}

fn periodogram_cmd(a: PeriodogramArgs) -> Result<(), Error> {
    let x = read_series_csv(&a.input)?;
    let mut p = periodogram(&x);
    if let Some(spans) = &a.smooth {
        p = smooth_daniell(&p, spans)?;
    }
    match out_dir(&a.common)? {
        Some(dir) => write_spectrum_csv(dir.join("periodogram.csv"), &p)?,
        None => {
            println!("omega,value");
            for (w, v) in p.grid().freqs().iter().zip(p.values()) {
                println!("{w},{v}");
            }
        }
    }
    Ok(())
}

fn divergence(a: DivergenceArgs) -> Result<(), Error> {
    let exclude_zero = !a.include_zero;
    let pilot = read_spectrum_csv(&a.pilot, exclude_zero)?;
    let target = match &a.target {
        Some(path) => read_spectrum_csv(path, exclude_zero)?,
        None => {
            let cfg: Option<serde_json::Value> = a.common.config.as_deref().map(read_config).transpose()?;
            let mc = model_config(&a.model, cfg.as_ref())?;
            let model = mc.build().map_err(|e| config_error(e.to_string()))?;
            let grid = FreqGrid::new(pilot.len(), exclude_zero)?;
            SpectrumSamples::from_spectrum(grid, &ModelSpectrum::new(model.as_ref(), &mc.params)?)?
        }
    };
    let spec = DivergenceSpec::new(a.alpha)
        .map_err(|e| config_error(e.to_string()))?
        .with_exclude_zero(exclude_zero);
    let value = divergence_discrete(&pilot, &target, &spec)?;
    let report = json!({
        "alpha": a.alpha,
        "value": value,
        "n": pilot.len(),
        "policy": if exclude_zero { "exclude-zero" } else { "include-zero" },
    });
    if let Some(dir) = out_dir(&a.common)? {
        write_json(dir.join("divergence.json"), &report)?;
    }
    print_json(&report)
}

fn estimate(a: EstimateArgs) -> Result<(), Error> {
    let mut pilot = match (&a.pilot, &a.series) {
        (Some(p), None) => read_spectrum_csv(p, true)?,
        (None, Some(s)) => periodogram(&read_series_csv(s)?),
        _ => return Err(config_error("give exactly one of --pilot or --series")),
    };
    if let Some(spans) = &a.smooth {
        pilot = smooth_daniell(&pilot, spans)?;
    }
    let kind: ModelKind = a.model.parse().map_err(|e: Error| config_error(e.to_string()))?;
    let model = ModelConfig {
        model: kind,
        params: a.init.clone(),
    }
    .build()
    .map_err(|e| config_error(e.to_string()))?;
    let spec = DivergenceSpec::new(a.alpha).map_err(|e| config_error(e.to_string()))?;
    let objective = Objective::new(&pilot, model, spec)?;
    let stop = StopCriteria {
        max_iter: a.max_iter,
        grad_tol: a.grad_tol,
    };
    let path = if a.armijo {
        gd_armijo(&a.init, &objective, &ArmijoConfig::default(), stop)?
    } else {
        gd_fixed(&a.init, &objective, &StepRule::Constant(a.step), stop)?
    };
    let report = json!({
        "model": a.model,
        "alpha": a.alpha,
        "init": a.init,
        "estimate": path.last(),
        "iterations": path.iterations(),
        "stop_reason": path.stop_reason.as_str(),
        "grad_norm": path.final_grad_norm(),
        "objective": path.objective.last(),
    });
    if let Some(dir) = out_dir(&a.common)? {
        write_path_csv(dir.join("path.csv"), &path)?;
        write_json(dir.join("estimate.json"), &report)?;
    }
    print_json(&report)
}

fn experiment(a: ExperimentArgs) -> Result<(), Error> {
    let path = a
        .common
        .config
        .as_deref()
        .ok_or_else(|| config_error("experiment needs --config"))?;
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = a.common.seed {
        config.seed = seed;
    }
    let out = out_dir(&a.common)?;
    let output = run_experiment(&config, out, a.workers)?;
    let summary = match &output {
        ExperimentOutput::MonteCarlo(r) => serde_json::to_value(&r.table)?,
        ExperimentOutput::Paths(r) => serde_json::to_value(&r.summary)?,
        ExperimentOutput::Szego(r) => serde_json::to_value(&r.summary)?,
        ExperimentOutput::Shift(r) => json!(r
            .spread
            .iter()
            .map(|s| json!({"z": s.z, "renyi_spread": s.renyi_spread, "is_spread": s.is_spread}))
            .collect::<Vec<_>>()),
    };
    print_json(&summary)
}
