//! Stochastic-approximation EM driver.
//!
//! Each iteration runs a short MCMC chain per curve, blends the sampled
//! sufficient statistics into per-curve running averages with a decreasing
//! step size, and then maximizes the expected complete-data log-likelihood
//! in closed form (Newton for the Dirichlet concentration). Burn-in
//! iterations use step size one and adapt the proposal scales; afterwards
//! the kernels are frozen, the step size decays, and the same weights drive
//! the conditional-mean accumulators used for prediction.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{amplitude_prior_mean, Curve, Dataset, ModelParams, SufficientStats};
use crate::sampler::{adapt_scale, chain_update, CurveState};
use crate::splines::{BasisSpec, SparseDesign, WarpingEffects};

/// Configuration of one SAEM run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaemConfig {
    /// Iterations run with step size one and proposal adaptation active.
    pub burn_in: usize,
    /// Total iterations including burn-in; must exceed `burn_in`.
    pub total_iters: usize,
    /// Post-burn-in step-size decay exponent, in (0.5, 1].
    pub step_exponent: f64,
    /// Metropolis-Hastings-within-Gibbs sweeps per curve per iteration.
    pub n_inner: usize,
    pub seed: u64,
    /// Adapt proposal scales during burn-in.
    pub adapt: bool,
    /// Initial proposal scale for every curve.
    pub initial_proposal_scale: f64,
    /// Burn-in iterations between proposal-scale updates.
    pub adapt_window: usize,
    /// Size of the uniform grid carrying fitted-curve conditional means.
    pub pred_grid_size: usize,
    /// Starting parameters; least-squares initialization when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<ModelParams>,
}

impl Default for SaemConfig {
    fn default() -> Self {
        Self {
            burn_in: 2000,
            total_iters: 12_000,
            step_exponent: 0.75,
            n_inner: 5,
            seed: 0,
            adapt: true,
            initial_proposal_scale: 0.3,
            adapt_window: 20,
            pred_grid_size: 201,
            init: None,
        }
    }
}

impl SaemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_iters <= self.burn_in {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "total_iters ({}) must exceed burn_in ({})",
                    self.total_iters, self.burn_in
                ),
            });
        }
        if !(self.step_exponent > 0.5 && self.step_exponent <= 1.0) {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "step_exponent must lie in (0.5, 1], got {}",
                    self.step_exponent
                ),
            });
        }
        if self.n_inner == 0 {
            return Err(Error::InvalidConfig {
                reason: "n_inner must be at least 1".into(),
            });
        }
        if self.initial_proposal_scale <= 0.0 || !self.initial_proposal_scale.is_finite() {
            return Err(Error::InvalidConfig {
                reason: "initial_proposal_scale must be positive".into(),
            });
        }
        if self.adapt_window == 0 {
            return Err(Error::InvalidConfig {
                reason: "adapt_window must be at least 1".into(),
            });
        }
        if self.pred_grid_size < 2 {
            return Err(Error::InvalidConfig {
                reason: "pred_grid_size must be at least 2".into(),
            });
        }
        Ok(())
    }
}

/// Step-size schedule: one during burn-in, then (k - B)^(-exponent).
pub fn step_size(k: usize, burn_in: usize, exponent: f64) -> f64 {
    if k <= burn_in {
        1.0
    } else {
        ((k - burn_in) as f64).powf(-exponent)
    }
}

/// Stochastic-approximation update: old + gamma * (mc - old) componentwise.
pub fn sa_update(old: &SufficientStats, mc: &SufficientStats, gamma: f64) -> SufficientStats {
    let mut out = old.clone();
    out.blend_in_place(mc, gamma);
    out
}

/// Expected complete-data log-likelihood as a function of the parameters,
/// with the conditional expectations replaced by the given statistics.
pub fn expected_complete_loglik(
    stats: &SufficientStats,
    n_tot: usize,
    n_curves: usize,
    params: &ModelParams,
) -> f64 {
    let n = n_curves as f64;
    let two_pi = 2.0 * std::f64::consts::PI;

    let amp_cov = params.amp_cov();
    let det = amp_cov.determinant();
    let inv = match amp_cov.try_inverse() {
        Some(inv) if det > 0.0 => inv,
        _ => return f64::NEG_INFINITY,
    };
    let la = -n * two_pi.ln() - 0.5 * n * det.ln() - 0.5 * (stats.s_a * inv).trace();

    let tau = params.concentration();
    let mut lw = n * ln_gamma(tau);
    for (k, s) in params.base_measure().iter().zip(stats.s_w.iter()) {
        let a = tau * k;
        lw += (a - 1.0) * s - n * ln_gamma(a);
    }

    let alpha = params.shape_coeffs();
    let quad = stats.s_yy - 2.0 * stats.s_by.dot(alpha)
        + (alpha.transpose() * &stats.s_bb * alpha)[(0, 0)];
    let ly = -0.5 * n_tot as f64 * (two_pi * params.noise_var()).ln()
        - 0.5 * quad / params.noise_var();

    la + lw + ly
}

/// Trigamma function psi'(x): recurrence up to a threshold, then the
/// asymptotic Bernoulli series.
fn trigamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + 1/(6x^3) - 1/(30x^5) + 1/(42x^7) - 1/(30x^9) + 5/(66x^11)
    acc + inv
        * (1.0
            + inv * (0.5
                + inv * (1.0 / 6.0
                    + inv2 * (-1.0 / 30.0
                        + inv2 * (1.0 / 42.0
                            + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0)))))))
}

/// Gradient in the concentration of the expected warp log-likelihood.
fn tau_gradient(tau: f64, s_w: &DVector<f64>, kappa0: &DVector<f64>, n: f64) -> f64 {
    let mut g = 0.0;
    for (k, s) in kappa0.iter().zip(s_w.iter()) {
        g += k * s - n * k * digamma(tau * k);
    }
    g + n * digamma(tau)
}

fn tau_curvature(tau: f64, kappa0: &DVector<f64>, n: f64) -> f64 {
    let mut c = 0.0;
    for k in kappa0.iter() {
        c -= n * k * k * trigamma(tau * k);
    }
    c + n * trigamma(tau)
}

enum TauUpdate {
    Converged(f64),
    /// The likelihood keeps increasing in the concentration: the observed
    /// increments sit essentially at the base measure (no warp variation).
    Unbounded,
}

fn newton_tau_impl(
    s_w: &DVector<f64>,
    kappa0: &DVector<f64>,
    n_curves: usize,
    tau_init: f64,
) -> Result<TauUpdate> {
    const TOL: f64 = 1e-8;
    const MAX_ITERS: usize = 500;
    const TAU_CAP: f64 = 1e14;
    if s_w.len() != kappa0.len() {
        return Err(Error::InvalidParams {
            reason: "log-increment statistics do not match the base measure".into(),
        });
    }
    if s_w.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParams {
            reason: "non-finite log-increment statistic".into(),
        });
    }
    let n = n_curves as f64;
    let grad = |tau: f64| tau_gradient(tau, s_w, kappa0, n);

    // Bracket a sign change of the gradient around the initializer. The
    // gradient is positive as tau -> 0; never turning negative means the
    // objective increases without bound.
    let mut lo = if tau_init.is_finite() && tau_init > 0.0 {
        tau_init.min(TAU_CAP)
    } else {
        1.0
    };
    while grad(lo) < 0.0 {
        lo /= 4.0;
        if lo < 1e-300 {
            return Err(Error::MaxIterations {
                context: "concentration update".into(),
                iters: 0,
                detail: "gradient negative down to tau = 1e-300".into(),
            });
        }
    }
    let mut hi = (lo * 4.0).min(TAU_CAP);
    while grad(hi) > 0.0 {
        hi *= 4.0;
        if hi > TAU_CAP {
            return Ok(TauUpdate::Unbounded);
        }
    }

    let mut tau = tau_init.clamp(lo, hi);
    for _ in 0..MAX_ITERS {
        let g = grad(tau);
        if g.abs() < TOL {
            return Ok(TauUpdate::Converged(tau));
        }
        if g > 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        // Newton step in u = ln(tau), bisection when it leaves the bracket
        // or the curvature has the wrong sign.
        let phi_p = tau * g;
        let phi_pp = tau * tau * tau_curvature(tau, kappa0, n) + phi_p;
        let mut next = if phi_pp < 0.0 {
            (tau.ln() - phi_p / phi_pp).exp()
        } else {
            f64::NAN
        };
        if !next.is_finite() || next <= lo || next >= hi {
            next = ((lo.ln() + hi.ln()) / 2.0).exp();
        }
        tau = next;
    }
    Err(Error::MaxIterations {
        context: "concentration update".into(),
        iters: MAX_ITERS,
        detail: format!("gradient {} at tau {}", grad(tau), tau),
    })
}

/// Maximize the expected warp log-likelihood over the concentration:
/// Newton in log space, safeguarded by bisection on the gradient sign,
/// run to gradient magnitude below 1e-8.
pub fn newton_tau(
    s_w: &DVector<f64>,
    kappa0: &DVector<f64>,
    n_curves: usize,
    tau_init: f64,
) -> Result<f64> {
    match newton_tau_impl(s_w, kappa0, n_curves, tau_init)? {
        TauUpdate::Converged(tau) => Ok(tau),
        TauUpdate::Unbounded => Err(Error::MaxIterations {
            context: "concentration update".into(),
            iters: 0,
            detail: "objective unbounded above: gradient still positive at tau = 1e14".into(),
        }),
    }
}

/// Closed-form maximization of the expected complete-data log-likelihood.
pub fn m_step(
    stats: &SufficientStats,
    n_tot: usize,
    n_curves: usize,
    kappa0: &DVector<f64>,
    tau_prev: f64,
) -> Result<ModelParams> {
    if n_curves == 0 || n_tot == 0 {
        return Err(Error::InvalidParams {
            reason: "m-step needs at least one curve and one observation".into(),
        });
    }
    let kf = stats.s_by.len();

    let chol = match nalgebra::Cholesky::new(stats.s_bb.clone()) {
        Some(c) => c,
        None => {
            let ridge = 1e-8 * stats.s_bb.trace() / kf as f64;
            log::warn!("singular design Gram in m-step, adding ridge {ridge:e}");
            nalgebra::Cholesky::new(&stats.s_bb + DMatrix::identity(kf, kf) * ridge).ok_or(
                Error::Singular {
                    context: "m-step design Gram".into(),
                },
            )?
        }
    };
    let alpha = chol.solve(&stats.s_by);

    let mut amp_cov = (stats.s_a + stats.s_a.transpose()) * (0.5 / n_curves as f64);
    if nalgebra::Cholesky::new(amp_cov).is_none() {
        let ridge = 1e-8 * amp_cov.trace().max(1e-300);
        log::warn!("degenerate amplitude covariance in m-step, adding ridge {ridge:e}");
        amp_cov += Matrix2::identity() * ridge;
    }

    let quad = stats.s_yy - 2.0 * stats.s_by.dot(&alpha)
        + (alpha.transpose() * &stats.s_bb * &alpha)[(0, 0)];
    let mut noise_var = quad / n_tot as f64;
    if noise_var <= 0.0 {
        log::warn!("noise variance {noise_var:e} from floating cancellation, flooring at 1e-12");
        noise_var = 1e-12;
    }

    // A degenerate dataset with no warp variation pushes the concentration
    // maximizer to infinity; continue with a capped value so the remaining
    // parameter updates stay usable.
    const TAU_DEGENERATE_CAP: f64 = 1e12;
    let tau = match newton_tau_impl(&stats.s_w, kappa0, n_curves, tau_prev)? {
        TauUpdate::Converged(t) => t,
        TauUpdate::Unbounded => {
            log::warn!(
                "concentration objective unbounded (no warp variation); capping at {TAU_DEGENERATE_CAP:e}"
            );
            TAU_DEGENERATE_CAP
        }
    };
    ModelParams::new(alpha, noise_var, amp_cov, tau, kappa0.clone())
}

/// Starting parameters: pooled least squares under identity warps for the
/// shape coefficients and noise variance, a diagonal amplitude covariance,
/// and concentration equal to the number of warp basis functions.
pub fn init_params(
    dataset: &Dataset,
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
) -> Result<ModelParams> {
    let kf = basis_f.num_basis();
    let n_tot = dataset.n_tot();
    if n_tot <= kf {
        return Err(Error::InvalidDataset {
            reason: format!("{n_tot} observations cannot identify {kf} shape coefficients"),
        });
    }
    let mut gram = DMatrix::zeros(kf, kf);
    let mut xty = DVector::zeros(kf);
    let identity = WarpingEffects::identity(basis_h);
    let mut design = SparseDesign::new(basis_f);
    for curve in dataset.curves() {
        design.evaluate_warped(&identity, basis_h, basis_f, curve.ts())?;
        design.accumulate_gram(1.0, &mut gram);
        design.accumulate_tr_mul(curve.ys(), 1.0, xty.as_mut_slice());
    }
    let chol = match nalgebra::Cholesky::new(gram.clone()) {
        Some(c) => c,
        None => {
            let ridge = 1e-8 * gram.trace() / kf as f64;
            log::warn!("rank-deficient pooled design, adding ridge {ridge:e}");
            nalgebra::Cholesky::new(&gram + DMatrix::identity(kf, kf) * ridge).ok_or(
                Error::Singular {
                    context: "pooled least-squares design".into(),
                },
            )?
        }
    };
    let alpha = chol.solve(&xty);

    let mut rss = 0.0;
    let mut fitted = Vec::new();
    for curve in dataset.curves() {
        design.evaluate_warped(&identity, basis_h, basis_f, curve.ts())?;
        fitted.resize(curve.len(), 0.0);
        design.mul_coeffs_into(alpha.as_slice(), &mut fitted);
        rss += curve
            .ys()
            .iter()
            .zip(fitted.iter())
            .map(|(y, f)| (y - f) * (y - f))
            .sum::<f64>();
    }
    let noise_var = (rss / n_tot as f64).max(1e-12);
    let amp_cov = Matrix2::new(noise_var, 0.0, 0.0, 0.01);
    let tau = basis_h.num_basis() as f64;
    ModelParams::with_default_base_measure(alpha, noise_var, amp_cov, tau, basis_h)
}

/// One iteration's parameter values, kept for offline convergence checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaSnapshot {
    pub iter: usize,
    pub shape_coeffs: Vec<f64>,
    pub noise_var: f64,
    pub amp_cov: [[f64; 2]; 2],
    pub concentration: f64,
}

impl ThetaSnapshot {
    fn from_params(iter: usize, p: &ModelParams) -> Self {
        let c = p.amp_cov();
        Self {
            iter,
            shape_coeffs: p.shape_coeffs().iter().copied().collect(),
            noise_var: p.noise_var(),
            amp_cov: [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]],
            concentration: p.concentration(),
        }
    }
}

/// Fit diagnostics: the full parameter trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub theta_path: Vec<ThetaSnapshot>,
}

/// Conditional-mean by-products for one fitted curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveFit {
    pub id: String,
    /// Conditional mean of the warp increments given the curve's data.
    pub warp_increments: Vec<f64>,
    /// Conditional mean of the vertical shift.
    pub amp_shift: f64,
    /// Conditional mean of the vertical scale.
    pub amp_scale: f64,
    /// Conditional mean of scale times the warped shape-basis rows on the
    /// prediction grid; contracting with the shape coefficients gives the
    /// fitted curve.
    pub warped_design_mean: DMatrix<f64>,
    /// Post-burn-in Metropolis-Hastings acceptance rate.
    pub accept_rate: f64,
    /// Final (frozen) proposal scale.
    pub proposal_scale: f64,
}

/// Result of a SAEM run: parameter estimates, per-curve conditional-mean
/// by-products, and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub shape_basis: BasisSpec,
    pub warp_basis: BasisSpec,
    pub pred_grid: Vec<f64>,
    pub curves: Vec<CurveFit>,
    pub diagnostics: Diagnostics,
}

/// Per-curve working storage for the fit loop.
struct CurveSlot {
    state: CurveState,
    rng: ChaCha8Rng,
    // Conditional-mean accumulators, post-burn-in only.
    warp_mean: Vec<f64>,
    shift_mean: f64,
    scale_mean: f64,
    design_mean: DMatrix<f64>,
    pred_design: SparseDesign,
    // Counter snapshots for windowed adaptation and the post-burn-in rate.
    window_accepts: u64,
    window_proposals: u64,
    burnin_accepts: u64,
    burnin_proposals: u64,
}

impl CurveSlot {
    fn post_burnin_rate(&self) -> f64 {
        let proposals = self.state.propose_count() - self.burnin_proposals;
        if proposals == 0 {
            return f64::NAN;
        }
        (self.state.accept_count() - self.burnin_accepts) as f64 / proposals as f64
    }
}

/// Maximum-likelihood fit by SAEM. Deterministic for a fixed configuration:
/// every curve owns an RNG stream keyed by its index, and reductions run in
/// dataset order.
pub fn fit(
    dataset: &Dataset,
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
    config: &SaemConfig,
) -> Result<FitResult> {
    config.validate()?;
    let mut params = match &config.init {
        Some(p) => p.clone(),
        None => init_params(dataset, basis_f, basis_h)?,
    };
    let kf = basis_f.num_basis();
    let m = basis_h.num_basis() - 1;
    if params.num_shape_basis() != kf || params.num_warp_increments() != m {
        return Err(Error::InvalidParams {
            reason: "initial parameters do not match the bases".into(),
        });
    }
    let n_curves = dataset.num_curves();
    let n_tot = dataset.n_tot();
    let kappa0 = params.base_measure().clone();
    let grid_size = config.pred_grid_size;
    let pred_grid: Vec<f64> = (0..grid_size)
        .map(|i| i as f64 / (grid_size - 1) as f64)
        .collect();

    let mut slots = Vec::with_capacity(n_curves);
    for (i, curve) in dataset.curves().iter().enumerate() {
        let state = CurveState::new(
            curve,
            &params,
            basis_f,
            basis_h,
            config.initial_proposal_scale,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64 + 1);
        slots.push(CurveSlot {
            state,
            rng,
            warp_mean: vec![0.0; m],
            shift_mean: 0.0,
            scale_mean: 0.0,
            design_mean: DMatrix::zeros(grid_size, kf),
            pred_design: SparseDesign::new(basis_f),
            window_accepts: 0,
            window_proposals: 0,
            burnin_accepts: 0,
            burnin_proposals: 0,
        });
    }

    let mut theta_path = Vec::with_capacity(config.total_iters);
    for k in 1..=config.total_iters {
        let gamma = step_size(k, config.burn_in, config.step_exponent);
        let in_burnin = k <= config.burn_in;
        let shared_params = &params;
        slots
            .par_iter_mut()
            .zip(dataset.curves().par_iter())
            .try_for_each(|(slot, curve)| -> Result<()> {
                chain_update(
                    &mut slot.state,
                    curve,
                    shared_params,
                    basis_f,
                    basis_h,
                    config.n_inner,
                    &mut slot.rng,
                )?;
                slot.state.accumulate_sa(curve, gamma);
                if !in_burnin {
                    let a = *slot.state.amplitude();
                    slot.shift_mean += gamma * (a.shift - slot.shift_mean);
                    slot.scale_mean += gamma * (a.scale - slot.scale_mean);
                    for (acc, w) in slot
                        .warp_mean
                        .iter_mut()
                        .zip(slot.state.warp().increments())
                    {
                        *acc += gamma * (w - *acc);
                    }
                    slot.pred_design.evaluate_warped(
                        slot.state.warp(),
                        basis_h,
                        basis_f,
                        &pred_grid,
                    )?;
                    slot.pred_design
                        .blend_into_dense(a.scale, gamma, &mut slot.design_mean);
                }
                Ok(())
            })?;

        let mut total = SufficientStats::zeros(kf, m);
        for slot in &slots {
            total.add_in_place(slot.state.sa_stats());
        }
        if !total.is_finite() {
            return Err(Error::NonFinite {
                context: "aggregated sufficient statistics".into(),
                iter: k,
            });
        }
        params = m_step(&total, n_tot, n_curves, &kappa0, params.concentration())?;
        theta_path.push(ThetaSnapshot::from_params(k, &params));

        if in_burnin {
            if config.adapt && k % config.adapt_window == 0 {
                for slot in &mut slots {
                    let proposals = slot.state.propose_count() - slot.window_proposals;
                    if proposals > 0 {
                        let rate = (slot.state.accept_count() - slot.window_accepts) as f64
                            / proposals as f64;
                        let scale = adapt_scale(slot.state.sigma_q(), rate);
                        slot.state.set_sigma_q(scale);
                    }
                    slot.window_accepts = slot.state.accept_count();
                    slot.window_proposals = slot.state.propose_count();
                }
            }
            if k == config.burn_in {
                for slot in &mut slots {
                    slot.burnin_accepts = slot.state.accept_count();
                    slot.burnin_proposals = slot.state.propose_count();
                }
            }
        }
    }

    let curves = slots
        .iter()
        .zip(dataset.curves())
        .map(|(slot, curve)| {
            let sum: f64 = slot.warp_mean.iter().sum();
            CurveFit {
                id: curve.id().to_string(),
                warp_increments: slot.warp_mean.iter().map(|w| w / sum).collect(),
                amp_shift: slot.shift_mean,
                amp_scale: slot.scale_mean,
                warped_design_mean: slot.design_mean.clone(),
                accept_rate: slot.post_burnin_rate(),
                proposal_scale: slot.state.sigma_q(),
            }
        })
        .collect();

    Ok(FitResult {
        params,
        shape_basis: basis_f.clone(),
        warp_basis: basis_h.clone(),
        pred_grid,
        curves,
        diagnostics: Diagnostics { theta_path },
    })
}

/// Predicted warp and fitted curve for one fitted curve on a grid.
///
/// The warp comes from the conditional-mean increments and is exact at any
/// point; the fitted curve is carried on the fit's prediction grid and
/// interpolated linearly in between.
pub fn predict(fit: &FitResult, curve_id: &str, ts: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let cf = fit
        .curves
        .iter()
        .find(|c| c.id == curve_id)
        .ok_or_else(|| Error::UnknownCurve(curve_id.to_string()))?;
    let warp = WarpingEffects::new(cf.warp_increments.clone())?;
    let h_hat = warp.evaluate(&fit.warp_basis, ts)?;

    let fitted_grid = &cf.warped_design_mean * fit.params.shape_coeffs();
    let g = fit.pred_grid.len();
    let y_hat = ts
        .iter()
        .map(|&t| {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::OutOfDomain { value: t });
            }
            let x = t * (g - 1) as f64;
            let i0 = (x.floor() as usize).min(g - 2);
            let frac = x - i0 as f64;
            Ok(cf.amp_shift + (1.0 - frac) * fitted_grid[i0] + frac * fitted_grid[i0 + 1])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((y_hat, h_hat))
}

/// Quadrature controls for the exact-E-step oracle.
#[derive(Debug, Clone)]
pub struct QuadratureSpec {
    /// Simpson nodes per amplitude axis (rounded up to odd).
    pub amp_nodes: usize,
    /// Simpson nodes on the free warp coordinate (rounded up to odd).
    pub warp_nodes: usize,
    /// Window-refinement passes.
    pub passes: usize,
    /// Half-width of refined windows in posterior standard deviations.
    pub span_sd: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            amp_nodes: 121,
            warp_nodes: 481,
            passes: 3,
            span_sd: 8.0,
        }
    }
}

/// Composite-Simpson nodes and weights on [a, b] with an odd node count.
fn simpson_rule(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = if n % 2 == 0 { n + 1 } else { n.max(3) };
    let h = (b - a) / (n - 1) as f64;
    let nodes: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (nodes, weights)
}

/// Per-warp-node cache for the oracle quadrature.
struct WarpNode {
    log_prior_w: f64,
    s_f: f64,
    s_ff: f64,
    s_fy: f64,
    bt_y: DVector<f64>,
    bt_one: DVector<f64>,
    gram: DMatrix<f64>,
    log_s: f64,
    log_1ms: f64,
    s_val: f64,
}

/// Exact conditional expectations of the per-curve sufficient statistics by
/// tensor quadrature over (shift, scale, free warp coordinate).
///
/// Only warp bases with three functions are supported: their increment
/// vector (s, 1 - s) has a single free coordinate, which keeps full tensor
/// quadrature over the latent state feasible. Windows are refined around
/// quadrature-estimated posterior moments, and the statistics are normalized
/// by the quadrature evidence. This is the oracle the sampled E-step is
/// validated against.
pub fn oracle_e_step(
    curve: &Curve,
    params: &ModelParams,
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
    quad: &QuadratureSpec,
) -> Result<SufficientStats> {
    if basis_h.num_basis() != 3 || params.num_warp_increments() != 2 {
        return Err(Error::UnsupportedOracle(basis_h.num_basis()));
    }
    let kf = basis_f.num_basis();
    if kf != params.num_shape_basis() {
        return Err(Error::InvalidParams {
            reason: "shape coefficients do not match the shape basis".into(),
        });
    }
    let mu0 = amplitude_prior_mean();
    let prior_cov = params.amp_cov();
    let prior_prec = prior_cov.try_inverse().ok_or(Error::Singular {
        context: "amplitude prior covariance".into(),
    })?;
    let tau = params.concentration();
    let kappa = params.base_measure();
    let inv_two_var = 0.5 / params.noise_var();
    let ys = curve.ys();
    let n_pts = curve.len() as f64;
    let s_y: f64 = ys.iter().sum();
    let s_yy_raw: f64 = ys.iter().map(|y| y * y).sum();

    // Initial windows: generous prior spans widened by the data scale, so
    // the first pass sees all the mass before refinement tightens in.
    let y_lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let y_range = (y_hi - y_lo).max(1.0);
    let sd_sh = prior_cov[(0, 0)].sqrt();
    let sd_sc = prior_cov[(1, 1)].sqrt();
    let shape_lo = params
        .shape_coeffs()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let shape_hi = params
        .shape_coeffs()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let shape_range = (shape_hi - shape_lo).max(1e-6);
    let sc_data = 3.0 * y_range / shape_range;
    let mut win_sh = (
        mu0[0] - quad.span_sd * sd_sh - y_range,
        mu0[0] + quad.span_sd * sd_sh + y_range,
    );
    let mut win_sc = (
        mu0[1] - quad.span_sd * sd_sc - sc_data,
        mu0[1] + quad.span_sd * sd_sc + sc_data,
    );
    let mut win_s = (1e-9, 1.0 - 1e-9);

    let mut design = SparseDesign::new(basis_f);
    let mut fh = vec![0.0; curve.len()];
    let mut stats = SufficientStats::zeros(kf, 2);
    let passes = quad.passes.max(1);

    for pass in 0..passes {
        let (s_nodes, s_weights) = simpson_rule(win_s.0, win_s.1, quad.warp_nodes);
        let (sh_nodes, sh_weights) = simpson_rule(win_sh.0, win_sh.1, quad.amp_nodes);
        let (sc_nodes, sc_weights) = simpson_rule(win_sc.0, win_sc.1, quad.amp_nodes);

        let mut per_s = Vec::with_capacity(s_nodes.len());
        for &s in &s_nodes {
            let w = WarpingEffects::new_unchecked(vec![s, 1.0 - s]);
            design.evaluate_warped(&w, basis_h, basis_f, curve.ts())?;
            design.mul_coeffs_into(params.shape_coeffs().as_slice(), &mut fh);
            let mut s_f = 0.0;
            let mut s_ff = 0.0;
            let mut s_fy = 0.0;
            for (f, y) in fh.iter().zip(ys.iter()) {
                s_f += f;
                s_ff += f * f;
                s_fy += f * y;
            }
            let mut bt_y = DVector::zeros(kf);
            design.accumulate_tr_mul(ys, 1.0, bt_y.as_mut_slice());
            let mut bt_one = DVector::zeros(kf);
            let ones = vec![1.0; curve.len()];
            design.accumulate_tr_mul(&ones, 1.0, bt_one.as_mut_slice());
            let mut gram = DMatrix::zeros(kf, kf);
            design.accumulate_gram(1.0, &mut gram);
            let log_prior_w = (tau * kappa[0] - 1.0) * s.ln()
                + (tau * kappa[1] - 1.0) * (1.0 - s).ln()
                + ln_gamma(tau)
                - ln_gamma(tau * kappa[0])
                - ln_gamma(tau * kappa[1]);
            per_s.push(WarpNode {
                log_prior_w,
                s_f,
                s_ff,
                s_fy,
                bt_y,
                bt_one,
                gram,
                log_s: s.ln(),
                log_1ms: (1.0 - s).ln(),
                s_val: s,
            });
        }

        let log_weight = |node: &WarpNode, sh: f64, sc: f64| -> f64 {
            let rss = s_yy_raw - 2.0 * sh * s_y - 2.0 * sc * node.s_fy
                + 2.0 * sh * sc * node.s_f
                + sh * sh * n_pts
                + sc * sc * node.s_ff;
            let d = Vector2::new(sh - mu0[0], sc - mu0[1]);
            let log_prior_a = -0.5 * (d.transpose() * prior_prec * d)[(0, 0)];
            -inv_two_var * rss + log_prior_a + node.log_prior_w
        };

        // First sweep: the maximum log weight, for stable exponentials.
        let mut log_max = f64::NEG_INFINITY;
        for node in &per_s {
            for &sh in &sh_nodes {
                for &sc in &sc_nodes {
                    log_max = log_max.max(log_weight(node, sh, sc));
                }
            }
        }
        if !log_max.is_finite() {
            return Err(Error::NonFinite {
                context: "oracle quadrature weights".into(),
                iter: pass,
            });
        }

        // Second sweep: evidence, statistics, and the moments that place
        // the next pass's windows.
        let mut evidence = 0.0;
        stats = SufficientStats::zeros(kf, 2);
        let mut mean = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for (node, ws) in per_s.iter().zip(s_weights.iter()) {
            for (&sh, wsh) in sh_nodes.iter().zip(sh_weights.iter()) {
                for (&sc, wsc) in sc_nodes.iter().zip(sc_weights.iter()) {
                    let rho = (log_weight(node, sh, sc) - log_max).exp() * ws * wsh * wsc;
                    if rho == 0.0 {
                        continue;
                    }
                    evidence += rho;
                    stats.s_yy += rho * (s_yy_raw - 2.0 * sh * s_y + sh * sh * n_pts);
                    stats
                        .s_by
                        .zip_zip_apply(&node.bt_y, &node.bt_one, |acc, by, b1| {
                            *acc += rho * sc * (by - sh * b1)
                        });
                    stats
                        .s_bb
                        .zip_apply(&node.gram, |acc, g| *acc += rho * sc * sc * g);
                    let d = Vector2::new(sh - mu0[0], sc - mu0[1]);
                    stats.s_a += (d * d.transpose()) * rho;
                    stats.s_w[0] += rho * node.log_s;
                    stats.s_w[1] += rho * node.log_1ms;
                    mean[0] += rho * sh;
                    mean[1] += rho * sc;
                    mean[2] += rho * node.s_val;
                    sq[0] += rho * sh * sh;
                    sq[1] += rho * sc * sc;
                    sq[2] += rho * node.s_val * node.s_val;
                }
            }
        }
        if evidence <= 0.0 || !evidence.is_finite() {
            return Err(Error::NonFinite {
                context: "oracle quadrature evidence".into(),
                iter: pass,
            });
        }
        let inv_z = 1.0 / evidence;
        stats.s_yy *= inv_z;
        stats.s_by *= inv_z;
        stats.s_bb *= inv_z;
        stats.s_a *= inv_z;
        stats.s_w *= inv_z;

        if pass + 1 < passes {
            let m_sh = mean[0] * inv_z;
            let m_sc = mean[1] * inv_z;
            let m_s = mean[2] * inv_z;
            let sd = |m: f64, s2: f64| (s2 * inv_z - m * m).max(1e-30).sqrt();
            let w_sh = quad.span_sd * sd(m_sh, sq[0]);
            let w_sc = quad.span_sd * sd(m_sc, sq[1]);
            let w_s = quad.span_sd * sd(m_s, sq[2]);
            win_sh = (m_sh - w_sh, m_sh + w_sh);
            win_sc = (m_sc - w_sc, m_sc + w_sc);
            win_s = ((m_s - w_s).max(1e-12), (m_s + w_s).min(1.0 - 1e-12));
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, suff_stats, complete_loglik, Scenario};
    use approx::assert_abs_diff_eq;
    use rand_distr::Distribution;

    #[test]
    fn step_size_schedule_values() {
        assert_eq!(step_size(3, 10, 0.75), 1.0);
        assert_eq!(step_size(11, 10, 0.6), 1.0);
        assert_eq!(step_size(26, 10, 0.75), 16f64.powf(-0.75));
        assert_abs_diff_eq!(step_size(26, 10, 0.75), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn step_size_satisfies_sa_conditions() {
        for (b, alpha) in [(0usize, 0.51), (2000usize, 0.75), (100usize, 1.0)] {
            // Condition 1: every step size lies in [0, 1].
            let mut sum_10k = 0.0;
            let mut sum_100k = 0.0;
            for k in 1..=100_000usize {
                let g = step_size(k, b, alpha);
                assert!((0.0..=1.0).contains(&g));
                if k <= b + 10_000 {
                    sum_10k += g;
                }
                sum_100k += g;
            }
            // Condition 2 (divergence trend): each decade past burn-in adds
            // at least the harmonic-series increment.
            assert!(
                sum_100k - sum_10k > 1.0,
                "partial sums stalled for alpha {alpha}"
            );
            // Condition 3 (convergence certificate): the tail block of the
            // squared steps stays below its p-series integral bound, which
            // sums to a finite limit over dyadic blocks.
            let k0 = 10_000usize;
            let tail_block: f64 = (k0 + 1..=10 * k0)
                .map(|j| {
                    let g = step_size(b + j, b, alpha);
                    g * g
                })
                .sum();
            let bound = (k0 as f64).powf(1.0 - 2.0 * alpha) / (2.0 * alpha - 1.0);
            assert!(
                tail_block <= bound * 1.0001,
                "squared tail {tail_block} exceeds integral bound {bound} for alpha {alpha}"
            );
        }
    }

    #[test]
    fn sa_update_blends() {
        let mut a = SufficientStats::zeros(2, 2);
        a.s_yy = 2.0;
        let mut b = SufficientStats::zeros(2, 2);
        b.s_yy = 4.0;
        assert_eq!(sa_update(&a, &b, 1.0).s_yy, 4.0);
        assert_eq!(sa_update(&a, &b, 0.0).s_yy, 2.0);
        assert_eq!(sa_update(&a, &b, 0.5).s_yy, 3.0);
    }

    #[test]
    fn trigamma_reference_values() {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        assert_abs_diff_eq!(trigamma(1.0), pi2 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trigamma(0.5), pi2 / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trigamma(2.0), pi2 / 6.0 - 1.0, epsilon = 1e-12);
        for x in [0.3, 1.7, 5.5, 20.0] {
            assert_abs_diff_eq!(
                trigamma(x),
                trigamma(x + 1.0) + 1.0 / (x * x),
                epsilon = 1e-12
            );
        }
    }

    fn dirichlet_logsums(
        tau: f64,
        kappa: &DVector<f64>,
        n: usize,
        seed: u64,
    ) -> DVector<f64> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s_w = DVector::zeros(kappa.len());
        for _ in 0..n {
            let gs: Vec<f64> = kappa
                .iter()
                .map(|k| {
                    rand_distr::Gamma::new(tau * k, 1.0)
                        .unwrap()
                        .sample(&mut rng)
                })
                .collect();
            let total: f64 = gs.iter().sum();
            for (acc, g) in s_w.iter_mut().zip(gs.iter()) {
                *acc += (g / total).ln();
            }
        }
        s_w
    }

    #[test]
    fn newton_tau_consistency_at_scale() {
        let kappa = DVector::from_vec(WarpingEffects::identity(
            &BasisSpec::new(6, 4).unwrap(),
        )
        .increments()
        .to_vec());
        let n = 10_000usize;
        let s_w = dirichlet_logsums(10.0, &kappa, n, 17);
        let tau = newton_tau(&s_w, &kappa, n, 6.0).unwrap();
        assert!(
            (tau - 10.0).abs() < 0.5,
            "tau {tau} should be within 5% of 10"
        );
    }

    #[test]
    fn newton_tau_matches_grid_search() {
        let kappa = DVector::from_vec(vec![0.1, 0.3, 0.4, 0.2]);
        let n = 50usize;
        let s_w = dirichlet_logsums(4.0, &kappa, n, 3);
        let tau = newton_tau(&s_w, &kappa, n, 1.0).unwrap();

        let objective = |t: f64| {
            let mut v = n as f64 * ln_gamma(t);
            for (k, s) in kappa.iter().zip(s_w.iter()) {
                v += (t * k - 1.0) * s - n as f64 * ln_gamma(t * k);
            }
            v
        };
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut grid_step = 0.0;
        for i in 0..10_000 {
            let u = -3.0 + 6.0 * i as f64 / 9999.0;
            let t = 10f64.powf(u);
            let v = objective(t);
            if v > best.0 {
                best = (v, t);
                grid_step = t * (6.0 / 9999.0 * std::f64::consts::LN_10);
            }
        }
        assert!(
            (tau - best.1).abs() <= 2.0 * grid_step,
            "newton {tau} vs grid {} (step {grid_step})",
            best.1
        );
        // Stationarity at the returned value.
        assert!(tau_gradient(tau, &s_w, &kappa, n as f64).abs() < 1e-8);
    }

    #[test]
    fn newton_tau_unbounded_objective_errors() {
        // Increments exactly at the base measure make the likelihood grow
        // without bound in the concentration.
        let kappa = DVector::from_vec(vec![0.25, 0.25, 0.5]);
        let n = 5usize;
        let s_w = DVector::from_vec(kappa.iter().map(|k: &f64| n as f64 * k.ln()).collect());
        match newton_tau(&s_w, &kappa, n, 2.0) {
            Err(Error::MaxIterations { .. }) => {}
            other => panic!("expected max-iteration error, got {other:?}"),
        }
    }

    #[test]
    fn m_step_recovers_exact_coefficients_from_noiseless_stats() {
        use crate::model::{curve_mean, Curve, Dataset};
        let scenario = Scenario::Shape1;
        let (bf, bh) = scenario.bases();
        let true_params = scenario.params();
        // Exactly noiseless observations at simulated effects.
        let (proto, effects) = simulate(&true_params, &bf, &bh, 6, 40, 2).unwrap();
        let curves: Vec<Curve> = proto
            .curves()
            .iter()
            .zip(effects.iter())
            .map(|(c, e)| {
                let mean =
                    curve_mean(&true_params, &e.amplitude, &e.warp, &bf, &bh, c.ts()).unwrap();
                Curve::new(c.id().to_string(), c.ts().to_vec(), mean).unwrap()
            })
            .collect();
        let data = Dataset::new(curves).unwrap();
        let stats = suff_stats(&data, &effects, &bf, &bh).unwrap();
        let fitted = m_step(
            &stats,
            data.n_tot(),
            data.num_curves(),
            true_params.base_measure(),
            5.0,
        )
        .unwrap();
        for (a, b) in fitted
            .shape_coeffs()
            .iter()
            .zip(true_params.shape_coeffs().iter())
        {
            assert!(
                (a - b).abs() <= 1e-10 * (1.0 + b.abs()),
                "recovered {a} vs true {b}"
            );
        }
    }

    #[test]
    fn m_step_covariance_is_statistic_mean() {
        let scenario = Scenario::Shape1;
        let (bf, bh) = scenario.bases();
        let params = scenario.params();
        let (data, effects) = simulate(&params, &bf, &bh, 8, 30, 4).unwrap();
        let stats = suff_stats(&data, &effects, &bf, &bh).unwrap();
        let fitted = m_step(
            &stats,
            data.n_tot(),
            data.num_curves(),
            params.base_measure(),
            5.0,
        )
        .unwrap();
        let expected = stats.s_a / data.num_curves() as f64;
        assert_abs_diff_eq!(
            (fitted.amp_cov() - expected).abs().max(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn m_step_maximizes_q_against_perturbations() {
        let scenario = Scenario::Shape1;
        let (bf, bh) = scenario.bases();
        let params = scenario.params();
        let (data, effects) = simulate(&params, &bf, &bh, 10, 25, 9).unwrap();
        let stats = suff_stats(&data, &effects, &bf, &bh).unwrap();
        let n_tot = data.n_tot();
        let n = data.num_curves();
        let fitted = m_step(&stats, n_tot, n, params.base_measure(), 5.0).unwrap();
        let q_star = expected_complete_loglik(&stats, n_tot, n, &fitted);

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let scale = 10f64.powf(rng.gen_range(-6.0..0.0));
            let mut alpha = fitted.shape_coeffs().clone();
            for a in alpha.iter_mut() {
                *a += scale * rng.gen_range(-1.0..1.0) * a.abs().max(1.0);
            }
            let noise = fitted.noise_var() * (1.0 + scale * rng.gen_range(-1.0..1.0));
            let tau = fitted.concentration() * (1.0 + scale * rng.gen_range(-1.0..1.0));
            let mut cov = *fitted.amp_cov();
            let bump = scale * rng.gen_range(-1.0..1.0);
            cov[(0, 0)] *= 1.0 + bump;
            cov[(1, 1)] *= 1.0 + scale * rng.gen_range(-1.0..1.0);
            let perturbed = ModelParams::new(
                alpha,
                noise.max(1e-12),
                cov,
                tau.max(1e-6),
                params.base_measure().clone(),
            );
            if let Ok(p) = perturbed {
                let q = expected_complete_loglik(&stats, n_tot, n, &p);
                assert!(
                    q <= q_star + 1e-8 * q_star.abs().max(1.0),
                    "perturbation improved Q: {q} > {q_star}"
                );
            }
        }
    }

    #[test]
    fn expected_loglik_matches_complete_loglik() {
        let scenario = Scenario::Shape1;
        let (bf, bh) = scenario.bases();
        let params = scenario.params();
        let (data, effects) = simulate(&params, &bf, &bh, 4, 19, 13).unwrap();
        let stats = suff_stats(&data, &effects, &bf, &bh).unwrap();
        let q = expected_complete_loglik(&stats, data.n_tot(), data.num_curves(), &params);
        let ll = complete_loglik(&params, &data, &effects, &bf, &bh).unwrap();
        assert_abs_diff_eq!(q, ll, epsilon = 1e-9 * ll.abs());
    }

    #[test]
    fn init_params_recovers_shape_without_random_effects() {
        let (bf, bh) = Scenario::Shape1.bases();
        let alpha = DVector::from_vec(vec![0.0, -200.0, -500.0, -200.0, 0.0]);
        let tight = ModelParams::with_default_base_measure(
            alpha.clone(),
            1e-12,
            Matrix2::new(1e-12, 0.0, 0.0, 1e-12),
            1e9,
            &bh,
        )
        .unwrap();
        let (data, _) = simulate(&tight, &bf, &bh, 5, 60, 8).unwrap();
        let init = init_params(&data, &bf, &bh).unwrap();
        for (a, b) in init.shape_coeffs().iter().zip(alpha.iter()) {
            assert!((a - b).abs() < 1.0, "init coefficient {a} vs true {b}");
        }
        assert!(init.noise_var() > 0.0);
        assert_eq!(init.concentration(), bh.num_basis() as f64);
    }

    #[test]
    fn config_validation() {
        let mut c = SaemConfig::default();
        assert!(c.validate().is_ok());
        c.total_iters = c.burn_in;
        assert!(c.validate().is_err());
        let mut c = SaemConfig {
            step_exponent: 0.5,
            ..SaemConfig::default()
        };
        assert!(c.validate().is_err());
        c.step_exponent = 1.0;
        assert!(c.validate().is_ok());
    }

    fn tiny_quadrature() -> QuadratureSpec {
        QuadratureSpec {
            amp_nodes: 61,
            warp_nodes: 161,
            passes: 2,
            span_sd: 8.0,
        }
    }

    fn tiny_instance(noise_var: f64) -> (ModelParams, BasisSpec, BasisSpec, Curve) {
        let bf = BasisSpec::new(4, 4).unwrap();
        let bh = BasisSpec::new(3, 3).unwrap();
        let params = ModelParams::with_default_base_measure(
            DVector::from_vec(vec![0.0, -30.0, -25.0, 2.0]),
            noise_var,
            Matrix2::new(9.0, 0.0, 0.0, 0.01),
            8.0,
            &bh,
        )
        .unwrap();
        let (data, _) = simulate(&params, &bf, &bh, 1, 10, 51).unwrap();
        (params, bf, bh, data.curves()[0].clone())
    }

    #[test]
    fn oracle_rejects_wide_warp_basis() {
        let (params, bf, _, curve) = tiny_instance(4.0);
        let bh_wide = BasisSpec::new(6, 4).unwrap();
        assert!(matches!(
            oracle_e_step(&curve, &params, &bf, &bh_wide, &tiny_quadrature()),
            Err(Error::UnsupportedOracle(6)) | Err(Error::InvalidParams { .. })
        ));
    }

    #[test]
    fn oracle_flat_likelihood_recovers_prior_moments() {
        let (_, bf, bh, curve) = tiny_instance(4.0);
        // Rebuild with an essentially flat likelihood.
        let params = ModelParams::with_default_base_measure(
            DVector::from_vec(vec![0.0, -30.0, -25.0, 2.0]),
            1e30,
            Matrix2::new(9.0, 0.0, 0.0, 0.01),
            8.0,
            &bh,
        )
        .unwrap();
        let stats = oracle_e_step(&curve, &params, &bf, &bh, &tiny_quadrature()).unwrap();
        // Amplitude outer products revert to the prior covariance.
        assert_abs_diff_eq!(stats.s_a[(0, 0)], 9.0, epsilon = 0.01);
        assert_abs_diff_eq!(stats.s_a[(1, 1)], 0.01, epsilon = 1e-5);
        assert_abs_diff_eq!(stats.s_a[(0, 1)], 0.0, epsilon = 0.01);
        // Log increments revert to prior digamma differences.
        let tau = params.concentration();
        let kappa = params.base_measure();
        assert_abs_diff_eq!(
            stats.s_w[0],
            digamma(tau * kappa[0]) - digamma(tau),
            epsilon = 1e-4
        );
        assert_abs_diff_eq!(
            stats.s_w[1],
            digamma(tau * kappa[1]) - digamma(tau),
            epsilon = 1e-4
        );
        // Shift-corrected squares revert to sum(y^2) + n * var(shift).
        let expected_yy: f64 =
            curve.ys().iter().map(|y| y * y).sum::<f64>() + curve.len() as f64 * 9.0;
        assert_abs_diff_eq!(stats.s_yy, expected_yy, epsilon = 1e-6 * expected_yy.abs());
    }

    #[test]
    fn oracle_symmetric_setup_gives_symmetric_warp_moments() {
        let bf = BasisSpec::new(4, 4).unwrap();
        let bh = BasisSpec::new(3, 3).unwrap();
        // Symmetric base shape and symmetric noiseless data: the posterior
        // over the free warp coordinate is symmetric about one half.
        let params = ModelParams::with_default_base_measure(
            DVector::from_vec(vec![0.0, -40.0, -40.0, 0.0]),
            4.0,
            Matrix2::new(9.0, 0.0, 0.0, 0.01),
            8.0,
            &bh,
        )
        .unwrap();
        let ts: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let design = bf.evaluate(&ts).unwrap();
        let ys: Vec<f64> = (design * params.shape_coeffs()).iter().copied().collect();
        let curve = Curve::new("sym".into(), ts, ys).unwrap();
        let stats = oracle_e_step(&curve, &params, &bf, &bh, &tiny_quadrature()).unwrap();
        assert_abs_diff_eq!(stats.s_w[0], stats.s_w[1], epsilon = 1e-6);
    }

    #[test]
    fn fit_rejects_mismatched_init() {
        let (bf, bh) = Scenario::Shape1.bases();
        let params = Scenario::Shape2.params();
        let (data, _) = simulate(&Scenario::Shape1.params(), &bf, &bh, 3, 12, 1).unwrap();
        let config = SaemConfig {
            burn_in: 2,
            total_iters: 4,
            init: Some(params),
            ..SaemConfig::default()
        };
        assert!(fit(&data, &bf, &bh, &config).is_err());
    }

    #[test]
    fn fit_on_degenerate_data_matches_pooled_least_squares() {
        // All curves identical with no warp or amplitude variation: the
        // estimated shape must coincide with the pooled regression.
        let (bf, bh) = Scenario::Shape1.bases();
        let alpha = DVector::from_vec(vec![0.0, -200.0, -500.0, -200.0, 0.0]);
        let tight = ModelParams::with_default_base_measure(
            alpha,
            1e-12,
            Matrix2::new(1e-12, 0.0, 0.0, 1e-12),
            1e9,
            &bh,
        )
        .unwrap();
        let (data, _) = simulate(&tight, &bf, &bh, 4, 50, 14).unwrap();
        let pooled = init_params(&data, &bf, &bh).unwrap();
        let config = SaemConfig {
            burn_in: 60,
            total_iters: 260,
            seed: 3,
            ..SaemConfig::default()
        };
        let result = fit(&data, &bf, &bh, &config).unwrap();
        for (a, b) in result
            .params
            .shape_coeffs()
            .iter()
            .zip(pooled.shape_coeffs().iter())
        {
            assert!((a - b).abs() < 1e-3, "fit {a} vs pooled {b}");
        }
    }

    #[test]
    fn fit_is_deterministic_and_predicts_valid_warps() {
        let scenario = Scenario::Shape1;
        let (bf, bh) = scenario.bases();
        let (data, _) = simulate(&scenario.params(), &bf, &bh, 4, 30, 6).unwrap();
        let config = SaemConfig {
            burn_in: 40,
            total_iters: 140,
            seed: 9,
            pred_grid_size: 101,
            ..SaemConfig::default()
        };
        let r1 = fit(&data, &bf, &bh, &config).unwrap();
        let r2 = fit(&data, &bf, &bh, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&r1.params).unwrap(),
            serde_json::to_string(&r2.params).unwrap()
        );

        let ts: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        for curve in data.curves() {
            let (y_hat, h_hat) = predict(&r1, curve.id(), &ts).unwrap();
            assert_eq!(h_hat[0], 0.0);
            assert_eq!(h_hat[100], 1.0);
            for pair in h_hat.windows(2) {
                assert!(pair[0] < pair[1], "predicted warp must increase");
            }
            assert!(y_hat.iter().all(|y| y.is_finite()));
        }
        assert!(predict(&r1, "missing", &ts).is_err());

        // Post-burn-in parameter moves stay within the step-size envelope.
        let path = &r1.diagnostics.theta_path;
        let var_scale: f64 = path.last().unwrap().noise_var;
        let late = &path[100..];
        let max_step = late
            .windows(2)
            .map(|w| (w[1].noise_var - w[0].noise_var).abs())
            .fold(0.0f64, f64::max);
        let early_step = (path[41].noise_var - path[40].noise_var).abs();
        assert!(
            max_step < early_step.max(0.2 * var_scale) + 1e-9,
            "late steps {max_step} should shrink below early steps {early_step}"
        );
    }
}
