//! Simulation-study measurements: integrated squared errors of the
//! estimated base shape and the predicted warps, and the multi-replicate
//! study driver.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{simulate, Scenario};
use crate::saem::{fit, predict, SaemConfig};
use crate::splines::BasisSpec;

/// Trapezoidal integral of the squared difference between two spline
/// functions sharing a basis, over a uniform grid on [0, 1].
pub fn imse(
    shape_hat: &DVector<f64>,
    shape_true: &DVector<f64>,
    basis_f: &BasisSpec,
    grid_size: usize,
) -> Result<f64> {
    if grid_size < 2 {
        return Err(Error::InvalidMetric {
            reason: format!("integration grid needs at least 2 points, got {grid_size}"),
        });
    }
    if shape_hat.len() != basis_f.num_basis() || shape_true.len() != basis_f.num_basis() {
        return Err(Error::InvalidMetric {
            reason: "coefficient lengths do not match the basis".into(),
        });
    }
    let ts: Vec<f64> = (0..grid_size)
        .map(|i| i as f64 / (grid_size - 1) as f64)
        .collect();
    let design = basis_f.evaluate(&ts)?;
    let diff = shape_hat - shape_true;
    let values = design * diff;
    Ok(trapezoid_of_squares(values.as_slice()))
}

/// Trapezoidal integral of the mean squared difference between predicted
/// and true warp values, averaged over curves. Both sets share one uniform
/// grid on [0, 1].
pub fn imspe(h_hat: &[Vec<f64>], h_true: &[Vec<f64>]) -> Result<f64> {
    if h_hat.len() != h_true.len() || h_hat.is_empty() {
        return Err(Error::InvalidMetric {
            reason: format!(
                "warp sets differ in curve count: {} vs {}",
                h_hat.len(),
                h_true.len()
            ),
        });
    }
    let g = h_hat[0].len();
    if g < 2 {
        return Err(Error::InvalidMetric {
            reason: "warp grids need at least 2 points".into(),
        });
    }
    let mut total = 0.0;
    for (hh, ht) in h_hat.iter().zip(h_true.iter()) {
        if hh.len() != g || ht.len() != g {
            return Err(Error::InvalidMetric {
                reason: "warp grids have unequal lengths".into(),
            });
        }
        let sq: Vec<f64> = hh.iter().zip(ht.iter()).map(|(a, b)| a - b).collect();
        total += trapezoid_of_squares(&sq);
    }
    Ok(total / h_hat.len() as f64)
}

fn trapezoid_of_squares(diff: &[f64]) -> f64 {
    let g = diff.len();
    let h = 1.0 / (g - 1) as f64;
    let mut acc = 0.5 * (diff[0] * diff[0] + diff[g - 1] * diff[g - 1]);
    for d in &diff[1..g - 1] {
        acc += d * d;
    }
    acc * h
}

/// Root mean squared difference between two equal-length vectors.
pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "rmse needs equal-length inputs");
    let ss: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    (ss / a.len() as f64).sqrt()
}

/// Why a replicate did not contribute to the study aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicateStatus {
    Ok,
    NumericalError,
    MaxTimeExceeded,
}

/// Metrics of a single simulate-fit-predict replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub index: usize,
    pub seed: u64,
    pub status: ReplicateStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imspe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_hat: Option<f64>,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregated study outcome. Aggregates are means over completed
/// replicates; failures are tallied by category.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: Scenario,
    pub n_curves: usize,
    pub n_points: usize,
    pub n_replicates: usize,
    pub seed: u64,
    pub replicates: Vec<ReplicateReport>,
    pub completed: usize,
    pub numerical_errors: usize,
    pub max_time_exceeded: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_imse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_imspe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_tau_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_sigma_hat: Option<f64>,
    pub mean_seconds: f64,
}

/// Grid used for the warp prediction error.
const IMSE_GRID: usize = 1001;

/// splitmix64, used to derive independent replicate seeds.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run `n_replicates` independent simulate-fit-predict rounds of a
/// benchmark scenario and aggregate the error metrics. Replicate failures
/// are recorded, not fatal. Deterministic given the seed; replicates run in
/// parallel and are reported in index order.
pub fn run_study(
    scenario: Scenario,
    n_curves: usize,
    n_points: usize,
    n_replicates: usize,
    seed: u64,
    config: &SaemConfig,
    max_seconds: Option<f64>,
) -> Result<StudyReport> {
    if n_replicates == 0 {
        return Err(Error::InvalidConfig {
            reason: "study needs at least one replicate".into(),
        });
    }
    config.validate()?;
    let (basis_f, basis_h) = scenario.bases();
    let truth = scenario.params();

    let replicates: Vec<ReplicateReport> = (0..n_replicates)
        .into_par_iter()
        .map(|index| {
            let rep_seed = derive_seed(seed, index as u64);
            let start = Instant::now();
            let outcome = run_replicate(
                n_curves, n_points, rep_seed, config, &basis_f, &basis_h, &truth,
            );
            let seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok((imse_val, imspe_val, tau_hat, sigma_hat)) => {
                    let timed_out = max_seconds.map_or(false, |budget| seconds > budget);
                    ReplicateReport {
                        index,
                        seed: rep_seed,
                        status: if timed_out {
                            ReplicateStatus::MaxTimeExceeded
                        } else {
                            ReplicateStatus::Ok
                        },
                        imse: Some(imse_val),
                        imspe: Some(imspe_val),
                        tau_hat: Some(tau_hat),
                        sigma_hat: Some(sigma_hat),
                        seconds,
                        error: None,
                    }
                }
                Err(e) => ReplicateReport {
                    index,
                    seed: rep_seed,
                    status: ReplicateStatus::NumericalError,
                    imse: None,
                    imspe: None,
                    tau_hat: None,
                    sigma_hat: None,
                    seconds,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let completed: Vec<&ReplicateReport> = replicates
        .iter()
        .filter(|r| r.status == ReplicateStatus::Ok)
        .collect();
    let mean_of = |f: fn(&ReplicateReport) -> Option<f64>| -> Option<f64> {
        if completed.is_empty() {
            None
        } else {
            Some(completed.iter().filter_map(|r| f(r)).sum::<f64>() / completed.len() as f64)
        }
    };
    Ok(StudyReport {
        scenario,
        n_curves,
        n_points,
        n_replicates,
        seed,
        completed: completed.len(),
        numerical_errors: replicates
            .iter()
            .filter(|r| r.status == ReplicateStatus::NumericalError)
            .count(),
        max_time_exceeded: replicates
            .iter()
            .filter(|r| r.status == ReplicateStatus::MaxTimeExceeded)
            .count(),
        mean_imse: mean_of(|r| r.imse),
        mean_imspe: mean_of(|r| r.imspe),
        mean_tau_hat: mean_of(|r| r.tau_hat),
        mean_sigma_hat: mean_of(|r| r.sigma_hat),
        mean_seconds: replicates.iter().map(|r| r.seconds).sum::<f64>()
            / replicates.len() as f64,
        replicates,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_replicate(
    n_curves: usize,
    n_points: usize,
    rep_seed: u64,
    config: &SaemConfig,
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
    truth: &crate::model::ModelParams,
) -> Result<(f64, f64, f64, f64)> {
    let (dataset, effects) = simulate(truth, basis_f, basis_h, n_curves, n_points, rep_seed)?;
    let fit_config = SaemConfig {
        seed: derive_seed(rep_seed, 0xF17),
        ..config.clone()
    };
    let result = fit(&dataset, basis_f, basis_h, &fit_config)?;

    let imse_val = imse(
        result.params.shape_coeffs(),
        truth.shape_coeffs(),
        basis_f,
        IMSE_GRID,
    )?;

    let grid: Vec<f64> = (0..IMSE_GRID)
        .map(|i| i as f64 / (IMSE_GRID - 1) as f64)
        .collect();
    let mut h_hat = Vec::with_capacity(dataset.num_curves());
    let mut h_true = Vec::with_capacity(dataset.num_curves());
    for (curve, truth_effects) in dataset.curves().iter().zip(effects.iter()) {
        let (_, h) = predict(&result, curve.id(), &grid)?;
        h_hat.push(h);
        h_true.push(truth_effects.warp.evaluate(basis_h, &grid)?);
    }
    let imspe_val = imspe(&h_hat, &h_true)?;

    Ok((
        imse_val,
        imspe_val,
        result.params.concentration(),
        result.params.noise_var().sqrt(),
    ))
}
