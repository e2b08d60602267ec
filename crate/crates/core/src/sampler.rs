//! Per-curve MCMC kernel of the E-step.
//!
//! Amplitude effects have a conjugate bivariate-normal full conditional and
//! are drawn exactly by a Gibbs step. Warp increments are updated by a
//! Metropolis-Hastings random walk on the centered-log-ratio image of the
//! simplex, mapped back through the softmax; the change-of-variables factor
//! makes the walk symmetric on the simplex itself.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{
    amplitude_prior_mean, curve_suff_stats, dirichlet_log_density, AmplitudeEffects, Curve,
    CurveEffects, ModelParams, SufficientStats,
};
use crate::splines::{BasisSpec, SparseDesign, WarpingEffects};

/// Acceptance-rate band that leaves the proposal scale untouched.
const TARGET_RATE_LOW: f64 = 0.17;
const TARGET_RATE_HIGH: f64 = 0.33;
const TARGET_RATE_MID: f64 = 0.25;

/// MCMC chain state for one curve: current effects, the running
/// stochastic-approximation average of its sufficient statistics, acceptance
/// counters, and the proposal scale.
#[derive(Debug, Clone)]
pub struct CurveState {
    amplitude: AmplitudeEffects,
    warp: WarpingEffects,
    sa_stats: SufficientStats,
    accept_count: u64,
    propose_count: u64,
    sigma_q: f64,
    // Cached design at the current warp plus proposal scratch, so basis
    // functions are only re-evaluated when a proposal is examined.
    design: SparseDesign,
    design_scratch: SparseDesign,
    fh: Vec<f64>,
    fh_scratch: Vec<f64>,
    mc_stats: SufficientStats,
}

impl CurveState {
    /// Start the chain at the prior means: amplitude (0, 1) and the warp
    /// at the Dirichlet base measure.
    pub fn new(
        curve: &Curve,
        params: &ModelParams,
        basis_f: &BasisSpec,
        basis_h: &BasisSpec,
        sigma_q: f64,
    ) -> Result<Self> {
        if sigma_q <= 0.0 || !sigma_q.is_finite() {
            return Err(Error::InvalidParams {
                reason: format!("proposal scale must be positive, got {sigma_q}"),
            });
        }
        let warp = WarpingEffects::new(params.base_measure().iter().copied().collect())?;
        let mut design = SparseDesign::new(basis_f);
        design.evaluate_warped(&warp, basis_h, basis_f, curve.ts())?;
        let mu0 = amplitude_prior_mean();
        let kf = basis_f.num_basis();
        let m = params.num_warp_increments();
        Ok(Self {
            amplitude: AmplitudeEffects {
                shift: mu0[0],
                scale: mu0[1],
            },
            warp,
            sa_stats: SufficientStats::zeros(kf, m),
            accept_count: 0,
            propose_count: 0,
            sigma_q,
            design_scratch: design.clone(),
            design,
            fh: vec![0.0; curve.len()],
            fh_scratch: vec![0.0; curve.len()],
            mc_stats: SufficientStats::zeros(kf, m),
        })
    }

    pub fn amplitude(&self) -> &AmplitudeEffects {
        &self.amplitude
    }

    pub fn warp(&self) -> &WarpingEffects {
        &self.warp
    }

    pub fn effects(&self) -> CurveEffects {
        CurveEffects {
            amplitude: self.amplitude,
            warp: self.warp.clone(),
        }
    }

    pub fn sa_stats(&self) -> &SufficientStats {
        &self.sa_stats
    }

    pub fn accept_count(&self) -> u64 {
        self.accept_count
    }

    pub fn propose_count(&self) -> u64 {
        self.propose_count
    }

    pub fn sigma_q(&self) -> f64 {
        self.sigma_q
    }

    pub fn set_sigma_q(&mut self, sigma_q: f64) {
        self.sigma_q = sigma_q;
    }

    /// Monte-Carlo statistics at the current state, blended into the running
    /// average with weight `gamma`.
    pub fn accumulate_sa(&mut self, curve: &Curve, gamma: f64) {
        let effects = CurveEffects {
            amplitude: self.amplitude,
            warp: self.warp.clone(),
        };
        curve_suff_stats(curve, &effects, &self.design, &mut self.mc_stats);
        self.sa_stats.blend_in_place(&self.mc_stats, gamma);
    }
}

/// Exact draw from the bivariate-normal full conditional of the amplitude
/// effects given the data and the current warp.
pub fn gibbs_amplitude<R: Rng>(
    curve: &Curve,
    warp: &WarpingEffects,
    params: &ModelParams,
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
    rng: &mut R,
) -> Result<AmplitudeEffects> {
    let mut design = SparseDesign::new(basis_f);
    design.evaluate_warped(warp, basis_h, basis_f, curve.ts())?;
    let mut fh = vec![0.0; curve.len()];
    design.mul_coeffs_into(params.shape_coeffs().as_slice(), &mut fh);
    gibbs_amplitude_from_profile(curve.ys(), &fh, params, rng)
}

/// Gibbs draw given the precomputed warped base-shape profile f(h(t)).
pub(crate) fn gibbs_amplitude_from_profile<R: Rng>(
    ys: &[f64],
    fh: &[f64],
    params: &ModelParams,
    rng: &mut R,
) -> Result<AmplitudeEffects> {
    let n = ys.len() as f64;
    let mut s_f = 0.0;
    let mut s_ff = 0.0;
    let mut s_y = 0.0;
    let mut s_fy = 0.0;
    for (y, f) in ys.iter().zip(fh.iter()) {
        s_f += f;
        s_ff += f * f;
        s_y += y;
        s_fy += f * y;
    }
    let inv_var = 1.0 / params.noise_var();
    let prior_prec = params.amp_cov().try_inverse().ok_or(Error::Singular {
        context: "amplitude prior covariance".into(),
    })?;
    let precision = Matrix2::new(
        inv_var * n + prior_prec[(0, 0)],
        inv_var * s_f + prior_prec[(0, 1)],
        inv_var * s_f + prior_prec[(1, 0)],
        inv_var * s_ff + prior_prec[(1, 1)],
    );
    let rhs = Vector2::new(inv_var * s_y, inv_var * s_fy) + prior_prec * amplitude_prior_mean();

    let chol = match nalgebra::Cholesky::new(precision) {
        Some(c) => c,
        None => {
            let jitter = 1e-10 * precision.trace();
            nalgebra::Cholesky::new(precision + Matrix2::identity() * jitter).ok_or(
                Error::Singular {
                    context: "amplitude full-conditional precision".into(),
                },
            )?
        }
    };
    let mean = chol.solve(&rhs);
    // a = mean + L^-T z gives covariance (L L^T)^-1, the conditional one.
    let l = chol.l();
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let d2 = z2 / l[(1, 1)];
    let d1 = (z1 - l[(1, 0)] * d2) / l[(0, 0)];
    Ok(AmplitudeEffects {
        shift: mean[0] + d1,
        scale: mean[1] + d2,
    })
}

/// Centered-log-ratio transform of the warp increments; the image sums to
/// zero. Errors on boundary points where a log would diverge.
pub fn clr(warp: &WarpingEffects) -> Result<Vec<f64>> {
    if !warp.is_interior() {
        return Err(Error::InvalidWarp {
            reason: "centered-log-ratio needs strictly positive increments".into(),
        });
    }
    let logs: Vec<f64> = warp.increments().iter().map(|w| w.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(logs.iter().map(|l| l - mean).collect())
}

/// Softmax map back onto the simplex, with max-subtraction so the map is
/// total over finite inputs. Extreme inputs can underflow an increment to
/// zero; downstream targets reject such proposals.
pub fn softmax_inv(x: &[f64]) -> WarpingEffects {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    WarpingEffects::new_unchecked(exps.iter().map(|e| e / sum).collect())
}

/// Random-walk proposal on the zero-sum hyperplane: an isotropic normal
/// step recentered to sum to zero, realizing the rank-deficient covariance
/// with diagonal sigma_q^2 (m-1)/m and off-diagonal -sigma_q^2/m.
pub fn propose_warp<R: Rng>(
    warp: &WarpingEffects,
    sigma_q: f64,
    rng: &mut R,
) -> Result<WarpingEffects> {
    let mut x = clr(warp)?;
    let m = x.len();
    let mut step: Vec<f64> = (0..m)
        .map(|_| sigma_q * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mean = step.iter().sum::<f64>() / m as f64;
    for s in &mut step {
        *s -= mean;
    }
    for (xi, s) in x.iter_mut().zip(step.iter()) {
        *xi += s;
    }
    Ok(softmax_inv(&x))
}

/// One Metropolis-Hastings update of the warp increments targeting their
/// full conditional given the amplitude effects and the data. Returns the
/// new state and whether the proposal was accepted.
pub fn mh_step_warp<R: Rng>(
    curve: &Curve,
    amplitude: &AmplitudeEffects,
    warp: &WarpingEffects,
    params: &ModelParams,
    sigma_q: f64,
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
    rng: &mut R,
) -> Result<(WarpingEffects, bool)> {
    let mut design = SparseDesign::new(basis_f);
    design.evaluate_warped(warp, basis_h, basis_f, curve.ts())?;
    let mut fh = vec![0.0; curve.len()];
    design.mul_coeffs_into(params.shape_coeffs().as_slice(), &mut fh);
    let mut scratch = design.clone();
    let mut fh_scratch = fh.clone();
    let mut w = warp.clone();
    let accepted = mh_step_cached(
        curve,
        amplitude,
        &mut w,
        params,
        sigma_q,
        basis_f,
        basis_h,
        &mut design,
        &mut scratch,
        &mut fh,
        &mut fh_scratch,
        rng,
    )?;
    Ok((w, accepted))
}

/// Sum of squared residuals of the curve against shift + scale * profile.
fn residual_ss(ys: &[f64], fh: &[f64], amplitude: &AmplitudeEffects) -> f64 {
    ys.iter()
        .zip(fh.iter())
        .map(|(y, f)| {
            let r = y - amplitude.shift - amplitude.scale * f;
            r * r
        })
        .sum()
}

/// Cached-design MH kernel. `design`/`fh` must match `warp` on entry and
/// are kept in sync with the returned state.
#[allow(clippy::too_many_arguments)]
fn mh_step_cached<R: Rng>(
    curve: &Curve,
    amplitude: &AmplitudeEffects,
    warp: &mut WarpingEffects,
    params: &ModelParams,
    sigma_q: f64,
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
    design: &mut SparseDesign,
    design_scratch: &mut SparseDesign,
    fh: &mut Vec<f64>,
    fh_scratch: &mut Vec<f64>,
    rng: &mut R,
) -> Result<bool> {
    let proposal = propose_warp(warp, sigma_q, rng)?;
    if !proposal.is_interior() {
        // Softmax underflow: zero target mass, reject outright.
        return Ok(false);
    }
    design_scratch.evaluate_warped(&proposal, basis_h, basis_f, curve.ts())?;
    design_scratch.mul_coeffs_into(params.shape_coeffs().as_slice(), fh_scratch);

    let inv_two_var = 0.5 / params.noise_var();
    let log_target_cur = -inv_two_var * residual_ss(curve.ys(), fh, amplitude)
        + dirichlet_log_density(params.concentration(), params.base_measure(), warp);
    let log_target_prop = -inv_two_var * residual_ss(curve.ys(), fh_scratch, amplitude)
        + dirichlet_log_density(params.concentration(), params.base_measure(), &proposal);
    // Change-of-variables correction for the walk in clr coordinates.
    let log_jacobian: f64 = proposal
        .increments()
        .iter()
        .zip(warp.increments().iter())
        .map(|(p, c)| p.ln() - c.ln())
        .sum();
    let log_alpha = log_target_prop - log_target_cur + log_jacobian;

    let accept = log_alpha >= 0.0 || rng.gen::<f64>().ln() < log_alpha;
    if accept {
        *warp = proposal;
        std::mem::swap(design, design_scratch);
        std::mem::swap(fh, fh_scratch);
    }
    Ok(accept)
}

/// Run `n_inner` Metropolis-Hastings-within-Gibbs sweeps on one curve:
/// each sweep draws the amplitude exactly, then updates the warp.
pub fn chain_update<R: Rng>(
    state: &mut CurveState,
    curve: &Curve,
    params: &ModelParams,
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
    n_inner: usize,
    rng: &mut R,
) -> Result<()> {
    if n_inner == 0 {
        return Err(Error::InvalidParams {
            reason: "n_inner must be at least 1".into(),
        });
    }
    // The cached design tracks the warp; the profile depends on the current
    // shape coefficients as well, so refresh it once per call.
    state
        .design
        .mul_coeffs_into(params.shape_coeffs().as_slice(), &mut state.fh);
    for _ in 0..n_inner {
        state.amplitude = gibbs_amplitude_from_profile(curve.ys(), &state.fh, params, rng)?;
        let accepted = mh_step_cached(
            curve,
            &state.amplitude,
            &mut state.warp,
            params,
            state.sigma_q,
            basis_f,
            basis_h,
            &mut state.design,
            &mut state.design_scratch,
            &mut state.fh,
            &mut state.fh_scratch,
            rng,
        )?;
        state.propose_count += 1;
        if accepted {
            state.accept_count += 1;
        }
    }
    Ok(())
}

/// Multiplicative Robbins-Monro correction of the proposal scale towards
/// the target acceptance band; inside the band the scale is left alone.
pub fn adapt_scale(sigma_q: f64, recent_accept_rate: f64) -> f64 {
    if (TARGET_RATE_LOW..=TARGET_RATE_HIGH).contains(&recent_accept_rate) {
        return sigma_q;
    }
    (sigma_q.ln() + (recent_accept_rate - TARGET_RATE_MID)).exp()
}
