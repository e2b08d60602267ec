//! Command-line orchestration: CSV ingestion, resolved run configurations,
//! and the artifact writers behind the `warpreg` subcommands.
//!
//! Data files are long-format CSV with header `curve_id,t,y`; floats are
//! written with 17 significant digits so a written dataset re-ingests
//! bit-exactly. Every JSON artifact embeds the resolved configuration that
//! produced it.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_warps, mixture_em, ClusterResult};
use crate::error::{Error, Result};
use crate::metrics::{run_study, StudyReport};
use crate::model::{simulate, Curve, CurveEffects, Dataset, ModelParams, Scenario};
use crate::saem::{fit, predict, FitResult, SaemConfig};
use crate::splines::BasisSpec;

/// Resolved configuration of one CLI invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum RunConfig {
    Simulate(SimulateConfig),
    Fit(FitConfig),
    Predict(PredictConfig),
    Cluster(ClusterConfig),
    Study(StudyConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub scenario: Scenario,
    pub curves: usize,
    pub points: usize,
    pub seed: u64,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub input: PathBuf,
    pub shape_basis_size: usize,
    pub warp_basis_size: usize,
    pub burnin: usize,
    /// Post-burn-in iterations.
    pub iters: usize,
    pub step_exponent: f64,
    pub inner: usize,
    pub seed: u64,
    pub output: PathBuf,
}

impl FitConfig {
    pub fn saem_config(&self) -> SaemConfig {
        SaemConfig {
            burn_in: self.burnin,
            total_iters: self.burnin + self.iters,
            step_exponent: self.step_exponent,
            n_inner: self.inner,
            seed: self.seed,
            ..SaemConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictConfig {
    /// A fit.json produced by the fit subcommand.
    pub input: PathBuf,
    pub grid: usize,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Kmeans,
    Mixture,
}

impl std::str::FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" | "k-means" => Ok(ClusterMethod::Kmeans),
            "mixture" | "em" => Ok(ClusterMethod::Mixture),
            other => Err(Error::InvalidConfig {
                reason: format!("unknown cluster method `{other}` (expected kmeans or mixture)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub method: ClusterMethod,
    pub clusters: usize,
    /// fit.json for kmeans; dataset CSV for the mixture method.
    pub input: PathBuf,
    /// Basis size for the mixture templates.
    pub shape_basis_size: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iters: usize,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub curves: usize,
    pub points: usize,
    pub replicates: usize,
    pub burnin: usize,
    pub iters: usize,
    pub step_exponent: f64,
    pub inner: usize,
    pub seed: u64,
    pub output: PathBuf,
}

impl StudyConfig {
    pub fn saem_config(&self) -> SaemConfig {
        SaemConfig {
            burn_in: self.burnin,
            total_iters: self.burnin + self.iters,
            step_exponent: self.step_exponent,
            n_inner: self.inner,
            seed: self.seed,
            ..SaemConfig::default()
        }
    }
}

/// Exit code for an error, grouped by category.
pub fn exit_code(err: &Error) -> i32 {
    match err.category() {
        "config" => 2,
        "invalid-input" => 3,
        "format" => 4,
        "io" => 5,
        "unknown-curve" => 6,
        _ => 7,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read a long-format CSV (`curve_id,t,y`) into a dataset. Within each
/// curve, rows are sorted by time and times are rescaled affinely to
/// [0, 1]; duplicate times and single-point curves are rejected.
pub fn ingest_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_open_error(path, e))?;
    {
        let headers = reader.headers().map_err(|e| csv_open_error(path, e))?;
        let names: Vec<&str> = headers.iter().collect();
        if names != ["curve_id", "t", "y"] {
            return Err(Error::CsvFormat {
                line: 1,
                reason: format!("expected header `curve_id,t,y`, found `{}`", names.join(",")),
            });
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64, u64)>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_open_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::CsvFormat {
                line,
                reason: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(Error::CsvFormat {
                line,
                reason: "empty curve_id".into(),
            });
        }
        let parse = |field: &str, name: &str| -> Result<f64> {
            let v: f64 = field.parse().map_err(|_| Error::CsvFormat {
                line,
                reason: format!("non-numeric {name} field `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::CsvFormat {
                    line,
                    reason: format!("non-finite {name} field `{field}`"),
                });
            }
            Ok(v)
        };
        let t = parse(&record[1], "t")?;
        let y = parse(&record[2], "y")?;
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((t, y, line));
    }

    let mut curves = Vec::with_capacity(order.len());
    for id in order {
        let mut entries = rows.remove(&id).expect("id collected from rows");
        entries.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite times"));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::CsvFormat {
                    line: pair[1].2,
                    reason: format!("duplicate time {} within curve `{id}`", pair[1].0),
                });
            }
        }
        let t_min = entries.first().expect("nonempty group").0;
        let t_max = entries.last().expect("nonempty group").0;
        if t_max == t_min {
            return Err(Error::CsvFormat {
                line: entries[0].2,
                reason: format!("curve `{id}` has a single time point; cannot standardize"),
            });
        }
        let span = t_max - t_min;
        let ts: Vec<f64> = entries.iter().map(|(t, _, _)| (t - t_min) / span).collect();
        for (pair, raw) in ts.windows(2).zip(entries.windows(2)) {
            if pair[0] >= pair[1] {
                return Err(Error::CsvFormat {
                    line: raw[1].2,
                    reason: format!(
                        "times {} and {} in curve `{id}` collapse after standardization",
                        raw[0].0, raw[1].0
                    ),
                });
            }
        }
        let ys: Vec<f64> = entries.iter().map(|(_, y, _)| *y).collect();
        curves.push(Curve::new(id, ts, ys)?);
    }
    Dataset::new(curves)
}

fn csv_open_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                Error::Io {
                    path: path.display().to_string(),
                    source: io,
                }
            } else {
                unreachable!("kind checked above")
            }
        }
        _ => Error::CsvFormat {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        },
    }
}

/// Write a dataset in the long CSV format, floats at 17 significant digits.
pub fn write_dataset_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = String::from("curve_id,t,y\n");
    for curve in dataset.curves() {
        for (t, y) in curve.ts().iter().zip(curve.ys()) {
            out.push_str(&format!("{},{:.16e},{:.16e}\n", curve.id(), t, y));
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n").map_err(io_err(path))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Serialize, Deserialize)]
struct TruthArtifact {
    config: RunConfig,
    params: ModelParams,
    effects: Vec<TruthEffects>,
}

#[derive(Serialize, Deserialize)]
struct TruthEffects {
    curve_id: String,
    shift: f64,
    scale: f64,
    warp_increments: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ThetaArtifact {
    config: RunConfig,
    params: ModelParams,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct FitArtifact {
    pub(crate) config: RunConfig,
    pub(crate) fit: FitResult,
}

#[derive(Serialize, Deserialize)]
struct DiagnosticsArtifact {
    config: RunConfig,
    acceptance: Vec<AcceptanceRow>,
    theta_path: Vec<crate::saem::ThetaSnapshot>,
}

#[derive(Serialize, Deserialize)]
struct AcceptanceRow {
    curve_id: String,
    accept_rate: f64,
    proposal_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct ClusterArtifact {
    config: RunConfig,
    result: ClusterResult,
}

#[derive(Serialize, Deserialize)]
struct StudyArtifact {
    config: RunConfig,
    report: StudyReport,
}

/// Execute one resolved configuration, writing its artifacts under the
/// configured output directory.
pub fn run(config: &RunConfig) -> Result<()> {
    match config {
        RunConfig::Simulate(c) => run_simulate(config, c),
        RunConfig::Fit(c) => run_fit(config, c),
        RunConfig::Predict(c) => run_predict(config, c),
        RunConfig::Cluster(c) => run_cluster(config, c),
        RunConfig::Study(c) => run_study_cmd(config, c),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn run_simulate(config: &RunConfig, c: &SimulateConfig) -> Result<()> {
    ensure_dir(&c.output)?;
    let (basis_f, basis_h) = c.scenario.bases();
    let params = c.scenario.params();
    let (dataset, effects) = simulate(&params, &basis_f, &basis_h, c.curves, c.points, c.seed)?;
    write_dataset_csv(&c.output.join("dataset.csv"), &dataset)?;
    let truth = TruthArtifact {
        config: config.clone(),
        params,
        effects: dataset
            .curves()
            .iter()
            .zip(effects.iter())
            .map(|(curve, e): (&Curve, &CurveEffects)| TruthEffects {
                curve_id: curve.id().to_string(),
                shift: e.amplitude.shift,
                scale: e.amplitude.scale,
                warp_increments: e.warp.increments().to_vec(),
            })
            .collect(),
    };
    write_json(&c.output.join("truth.json"), &truth)
}

fn run_fit(config: &RunConfig, c: &FitConfig) -> Result<()> {
    ensure_dir(&c.output)?;
    let dataset = ingest_csv(&c.input)?;
    let basis_f = BasisSpec::new(c.shape_basis_size, 4)?;
    let basis_h = BasisSpec::new(c.warp_basis_size, 4)?;
    let result = fit(&dataset, &basis_f, &basis_h, &c.saem_config())?;

    write_json(
        &c.output.join("theta.json"),
        &ThetaArtifact {
            config: config.clone(),
            params: result.params.clone(),
        },
    )?;
    write_grids_csv(&c.output.join("grids.csv"), &result)?;
    write_json(
        &c.output.join("diagnostics.json"),
        &DiagnosticsArtifact {
            config: config.clone(),
            acceptance: result
                .curves
                .iter()
                .map(|cf| AcceptanceRow {
                    curve_id: cf.id.clone(),
                    accept_rate: cf.accept_rate,
                    proposal_scale: cf.proposal_scale,
                })
                .collect(),
            theta_path: result.diagnostics.theta_path.clone(),
        },
    )?;
    write_json(
        &c.output.join("fit.json"),
        &FitArtifact {
            config: config.clone(),
            fit: result,
        },
    )
}

fn write_grids_csv(path: &Path, result: &FitResult) -> Result<()> {
    let mut out = String::from("curve_id,t,h_hat,y_hat\n");
    for cf in &result.curves {
        let (y_hat, h_hat) = predict(result, &cf.id, &result.pred_grid)?;
        for ((t, h), y) in result.pred_grid.iter().zip(h_hat.iter()).zip(y_hat.iter()) {
            out.push_str(&format!("{},{:.16e},{:.16e},{:.16e}\n", cf.id, t, h, y));
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

fn run_predict(config: &RunConfig, c: &PredictConfig) -> Result<()> {
    if c.grid < 2 {
        return Err(Error::InvalidConfig {
            reason: format!("prediction grid needs at least 2 points, got {}", c.grid),
        });
    }
    ensure_dir(&c.output)?;
    let artifact: FitArtifact = read_json(&c.input)?;
    let grid: Vec<f64> = (0..c.grid)
        .map(|i| i as f64 / (c.grid - 1) as f64)
        .collect();
    let mut out = String::from("curve_id,t,h_hat,y_hat\n");
    for cf in &artifact.fit.curves {
        let (y_hat, h_hat) = predict(&artifact.fit, &cf.id, &grid)?;
        for ((t, h), y) in grid.iter().zip(h_hat.iter()).zip(y_hat.iter()) {
            out.push_str(&format!("{},{:.16e},{:.16e},{:.16e}\n", cf.id, t, h, y));
        }
    }
    let path = c.output.join("predictions.csv");
    fs::write(&path, out).map_err(io_err(&path))?;
    write_json(
        &c.output.join("predictions.json"),
        &serde_json::json!({ "config": config, "grid_size": c.grid }),
    )
}

fn run_cluster(config: &RunConfig, c: &ClusterConfig) -> Result<()> {
    ensure_dir(&c.output)?;
    let (ids, result) = match c.method {
        ClusterMethod::Kmeans => {
            let artifact: FitArtifact = read_json(&c.input)?;
            let coeffs: Vec<Vec<f64>> = artifact
                .fit
                .curves
                .iter()
                .map(|cf| cf.warp_increments.clone())
                .collect();
            let ids: Vec<String> = artifact.fit.curves.iter().map(|cf| cf.id.clone()).collect();
            (ids, kmeans_warps(&coeffs, c.clusters, c.seed, c.restarts)?)
        }
        ClusterMethod::Mixture => {
            let dataset = ingest_csv(&c.input)?;
            let basis = BasisSpec::new(c.shape_basis_size, 4)?;
            let ids: Vec<String> = dataset
                .curves()
                .iter()
                .map(|curve| curve.id().to_string())
                .collect();
            (
                ids,
                mixture_em(&dataset, c.clusters, &basis, c.seed, c.max_iters, 1e-9)?,
            )
        }
    };

    let mut out = String::from("curve_id,label\n");
    for (id, label) in ids.iter().zip(result.labels.iter()) {
        out.push_str(&format!("{id},{label}\n"));
    }
    let path = c.output.join("labels.csv");
    fs::write(&path, out).map_err(io_err(&path))?;
    write_json(
        &c.output.join("clusters.json"),
        &ClusterArtifact {
            config: config.clone(),
            result,
        },
    )
}

fn run_study_cmd(config: &RunConfig, c: &StudyConfig) -> Result<()> {
    ensure_dir(&c.output)?;
    let report = run_study(
        c.scenario,
        c.curves,
        c.points,
        c.replicates,
        c.seed,
        &c.saem_config(),
        None,
    )?;
    write_report_csv(&c.output.join("report.csv"), &report)?;
    write_json(
        &c.output.join("report.json"),
        &StudyArtifact {
            config: config.clone(),
            report,
        },
    )
}

fn write_report_csv(path: &Path, report: &StudyReport) -> Result<()> {
    let mut out = String::from("replicate,seed,status,imse,imspe,tau_hat,sigma_hat,seconds\n");
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6e}"));
    for r in &report.replicates {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3}\n",
            r.index,
            r.seed,
            serde_json::to_value(r.status)
                .expect("status serializes")
                .as_str()
                .unwrap_or("unknown"),
            fmt(r.imse),
            fmt(r.imspe),
            fmt(r.tau_hat),
            fmt(r.sigma_hat),
            r.seconds
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}
