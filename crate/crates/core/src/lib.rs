//! Model-based curve registration.
//!
//! Noisy functional data often vary both in amplitude and in phase: each
//! observed curve is a vertically shifted and scaled copy of a common base
//! shape, evaluated on its own distorted time axis. This crate fits that
//! model directly by maximum likelihood. The base shape is a B-spline, each
//! curve carries Gaussian shift/scale effects and a monotone spline warp
//! whose coefficient increments follow a Dirichlet distribution, and the
//! marginal likelihood is maximized by a stochastic-approximation EM driver
//! with a Metropolis-Hastings-within-Gibbs E-step.
//!
//! The crate also ships a simulator for the two benchmark shapes, an
//! integrated-squared-error metrics harness, and two clustering routines
//! (K-means on predicted warp coefficients and a mixture-of-curves EM), all
//! reachable from the `warpreg` command-line tool.

pub mod cli;
pub mod clustering;
pub mod error;
pub mod metrics;
pub mod model;
pub mod saem;
pub mod sampler;
pub mod splines;

pub use error::{Error, Result};
pub use model::{
    AmplitudeEffects, Curve, CurveEffects, Dataset, ModelParams, Scenario, SufficientStats,
};
pub use saem::{FitResult, SaemConfig};
pub use splines::{BasisMatrix, BasisSpec, WarpingEffects};
