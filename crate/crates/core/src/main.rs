//! `warpreg` command line: simulate benchmark data, fit the registration
//! model, evaluate predictions, cluster curves, and run simulation studies.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use warpreg::cli::{
    self, ClusterConfig, ClusterMethod, FitConfig, PredictConfig, RunConfig, SimulateConfig,
    StudyConfig,
};
use warpreg::error::Error;
use warpreg::model::Scenario;

#[derive(Parser)]
#[command(
    name = "warpreg",
    version,
    about = "Model-based curve registration by stochastic-approximation EM"
)]
struct CliArgs {
    /// JSON config file supplying defaults; explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a benchmark scenario to dataset.csv + truth.json.
    Simulate(SimulateArgs),
    /// Fit the registration model to a CSV dataset.
    Fit(FitArgs),
    /// Evaluate a saved fit on a uniform grid.
    Predict(PredictArgs),
    /// Cluster curves by predicted warps (kmeans) or raw data (mixture).
    Cluster(ClusterArgs),
    /// Run a multi-replicate simulation study.
    Study(StudyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Benchmark scenario: shape1 or shape2.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Number of curves.
    #[arg(long)]
    curves: Option<usize>,
    /// Observations per curve.
    #[arg(long = "n")]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Input dataset CSV (header curve_id,t,y).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Shape-basis size.
    #[arg(long)]
    kf: Option<usize>,
    /// Warp-basis size.
    #[arg(long)]
    kh: Option<usize>,
    /// Burn-in iterations.
    #[arg(long)]
    burnin: Option<usize>,
    /// Post-burn-in iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Step-size decay exponent in (0.5, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Inner MCMC sweeps per iteration.
    #[arg(long)]
    inner: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// fit.json from a previous fit run.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Grid size on [0, 1].
    #[arg(long = "n")]
    n: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// kmeans (on a fit.json) or mixture (on a dataset CSV).
    #[arg(long)]
    method: Option<ClusterMethod>,
    /// Number of clusters.
    #[arg(long = "M")]
    clusters: Option<usize>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Basis size for mixture templates.
    #[arg(long)]
    kf: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// K-means restarts.
    #[arg(long)]
    restarts: Option<usize>,
    /// Mixture EM iteration cap.
    #[arg(long)]
    iters: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    curves: Option<usize>,
    /// Observations per curve.
    #[arg(long = "n")]
    n: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    inner: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Defaults supplied by --config; every field optional, flags win.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    kf: Option<usize>,
    kh: Option<usize>,
    burnin: Option<usize>,
    iters: Option<usize>,
    alpha: Option<f64>,
    inner: Option<usize>,
    seed: Option<u64>,
    scenario: Option<Scenario>,
    n: Option<usize>,
    curves: Option<usize>,
    replicates: Option<usize>,
    method: Option<ClusterMethod>,
    #[serde(rename = "M", alias = "m")]
    clusters: Option<usize>,
    restarts: Option<usize>,
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, Error> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.display().to_string(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
                reason: format!("config file {}: {e}", p.display()),
            })
        }
    }
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T, Error> {
    value.ok_or_else(|| Error::InvalidConfig {
        reason: format!("missing required value `{flag}` (flag or config file)"),
    })
}

fn resolve(args: CliArgs) -> Result<RunConfig, Error> {
    let file = load_file_config(&args.config)?;
    let config = match args.command {
        Command::Simulate(a) => RunConfig::Simulate(SimulateConfig {
            scenario: require(a.scenario.or(file.scenario), "--scenario")?,
            curves: a.curves.or(file.curves).unwrap_or(20),
            points: a.n.or(file.n).unwrap_or(100),
            seed: a.seed.or(file.seed).unwrap_or(0),
            output: require(a.output.or(file.output.clone()), "--output")?,
        }),
        Command::Fit(a) => RunConfig::Fit(FitConfig {
            input: require(a.input.or(file.input.clone()), "--input")?,
            shape_basis_size: a.kf.or(file.kf).unwrap_or(5),
            warp_basis_size: a.kh.or(file.kh).unwrap_or(6),
            burnin: a.burnin.or(file.burnin).unwrap_or(2000),
            iters: a.iters.or(file.iters).unwrap_or(10_000),
            step_exponent: a.alpha.or(file.alpha).unwrap_or(0.75),
            inner: a.inner.or(file.inner).unwrap_or(5),
            seed: a.seed.or(file.seed).unwrap_or(0),
            output: require(a.output.or(file.output.clone()), "--output")?,
        }),
        Command::Predict(a) => RunConfig::Predict(PredictConfig {
            input: require(a.input.or(file.input.clone()), "--input")?,
            grid: a.n.or(file.n).unwrap_or(101),
            output: require(a.output.or(file.output.clone()), "--output")?,
        }),
        Command::Cluster(a) => RunConfig::Cluster(ClusterConfig {
            method: require(a.method.or(file.method), "--method")?,
            clusters: require(a.clusters.or(file.clusters), "--M")?,
            input: require(a.input.or(file.input.clone()), "--input")?,
            shape_basis_size: a.kf.or(file.kf).unwrap_or(5),
            seed: a.seed.or(file.seed).unwrap_or(0),
            restarts: a.restarts.or(file.restarts).unwrap_or(10),
            max_iters: a.iters.or(file.iters).unwrap_or(200),
            output: require(a.output.or(file.output.clone()), "--output")?,
        }),
        Command::Study(a) => RunConfig::Study(StudyConfig {
            scenario: require(a.scenario.or(file.scenario), "--scenario")?,
            curves: a.curves.or(file.curves).unwrap_or(20),
            points: a.n.or(file.n).unwrap_or(100),
            replicates: a.replicates.or(file.replicates).unwrap_or(10),
            burnin: a.burnin.or(file.burnin).unwrap_or(2000),
            iters: a.iters.or(file.iters).unwrap_or(10_000),
            step_exponent: a.alpha.or(file.alpha).unwrap_or(0.75),
            inner: a.inner.or(file.inner).unwrap_or(5),
            seed: a.seed.or(file.seed).unwrap_or(0),
            output: require(a.output.or(file.output.clone()), "--output")?,
        }),
    };
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = CliArgs::parse();
    let config = match resolve(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            return ExitCode::from(cli::exit_code(&e) as u8);
        }
    };
    match cli::run(&config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
