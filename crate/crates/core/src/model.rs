//! Generative model, likelihood components, and sufficient statistics.
//!
//! Each observed curve is a vertical shift and scale of a common B-spline
//! base shape evaluated at warped times, plus white noise. The shift/scale
//! pair is bivariate normal with fixed mean (0, 1); the warp increments are
//! Dirichlet with one free concentration parameter and a fixed base measure.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::splines::{BasisSpec, SparseDesign, WarpingEffects};

/// Fixed prior mean of the amplitude effects (shift 0, scale 1); pinning it
/// is the identifiability convention of the model.
pub fn amplitude_prior_mean() -> Vector2<f64> {
    Vector2::new(0.0, 1.0)
}

/// Increments below this are redrawn during simulation so log-increment
/// statistics stay finite.
const MIN_INCREMENT: f64 = 1e-12;

/// Model parameters: base-shape coefficients, noise variance, amplitude
/// covariance, and the Dirichlet concentration with its fixed base measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsDto", into = "ParamsDto")]
pub struct ModelParams {
    shape_coeffs: DVector<f64>,
    noise_var: f64,
    amp_cov: Matrix2<f64>,
    concentration: f64,
    base_measure: DVector<f64>,
}

impl ModelParams {
    pub fn new(
        shape_coeffs: DVector<f64>,
        noise_var: f64,
        amp_cov: Matrix2<f64>,
        concentration: f64,
        base_measure: DVector<f64>,
    ) -> Result<Self> {
        if shape_coeffs.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParams {
                reason: "non-finite base-shape coefficient".into(),
            });
        }
        if !noise_var.is_finite() || noise_var <= 0.0 {
            return Err(Error::InvalidParams {
                reason: format!("noise variance must be positive, got {noise_var}"),
            });
        }
        if (amp_cov[(0, 1)] - amp_cov[(1, 0)]).abs() > 1e-12 * (1.0 + amp_cov.abs().max()) {
            return Err(Error::InvalidParams {
                reason: "amplitude covariance must be symmetric".into(),
            });
        }
        if amp_cov.iter().any(|v| !v.is_finite())
            || nalgebra::Cholesky::new(amp_cov).is_none()
        {
            return Err(Error::InvalidParams {
                reason: "amplitude covariance must be symmetric positive-definite".into(),
            });
        }
        if !concentration.is_finite() || concentration <= 0.0 {
            return Err(Error::InvalidParams {
                reason: format!("concentration must be positive, got {concentration}"),
            });
        }
        if base_measure.is_empty() || base_measure.iter().any(|k| !k.is_finite() || *k <= 0.0) {
            return Err(Error::InvalidParams {
                reason: "base measure entries must be positive".into(),
            });
        }
        let sum: f64 = base_measure.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams {
                reason: format!("base measure sums to {sum}, expected 1"),
            });
        }
        Ok(Self {
            shape_coeffs,
            noise_var,
            amp_cov,
            concentration,
            base_measure,
        })
    }

    /// Parameters with the base measure taken from the warp basis: the
    /// Greville differences, which make the mean warp exactly the identity.
    pub fn with_default_base_measure(
        shape_coeffs: DVector<f64>,
        noise_var: f64,
        amp_cov: Matrix2<f64>,
        concentration: f64,
        basis_h: &BasisSpec,
    ) -> Result<Self> {
        let kappa = DVector::from_vec(
            WarpingEffects::identity(basis_h).increments().to_vec(),
        );
        Self::new(shape_coeffs, noise_var, amp_cov, concentration, kappa)
    }

    pub fn shape_coeffs(&self) -> &DVector<f64> {
        &self.shape_coeffs
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn amp_cov(&self) -> &Matrix2<f64> {
        &self.amp_cov
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn base_measure(&self) -> &DVector<f64> {
        &self.base_measure
    }

    pub fn num_shape_basis(&self) -> usize {
        self.shape_coeffs.len()
    }

    pub fn num_warp_increments(&self) -> usize {
        self.base_measure.len()
    }

    fn check_bases(&self, basis_f: &BasisSpec, basis_h: &BasisSpec) -> Result<()> {
        if self.num_shape_basis() != basis_f.num_basis() {
            return Err(Error::InvalidParams {
                reason: format!(
                    "{} shape coefficients for a basis with {} functions",
                    self.num_shape_basis(),
                    basis_f.num_basis()
                ),
            });
        }
        if self.num_warp_increments() + 1 != basis_h.num_basis() {
            return Err(Error::InvalidParams {
                reason: format!(
                    "{} base-measure entries for a warp basis with {} functions",
                    self.num_warp_increments(),
                    basis_h.num_basis()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize, Clone)]
struct ParamsDto {
    shape_coeffs: Vec<f64>,
    noise_var: f64,
    amp_cov: [[f64; 2]; 2],
    concentration: f64,
    base_measure: Vec<f64>,
}

impl From<ModelParams> for ParamsDto {
    fn from(p: ModelParams) -> Self {
        Self {
            shape_coeffs: p.shape_coeffs.iter().copied().collect(),
            noise_var: p.noise_var,
            amp_cov: [
                [p.amp_cov[(0, 0)], p.amp_cov[(0, 1)]],
                [p.amp_cov[(1, 0)], p.amp_cov[(1, 1)]],
            ],
            concentration: p.concentration,
            base_measure: p.base_measure.iter().copied().collect(),
        }
    }
}

impl TryFrom<ParamsDto> for ModelParams {
    type Error = Error;

    fn try_from(d: ParamsDto) -> Result<Self> {
        ModelParams::new(
            DVector::from_vec(d.shape_coeffs),
            d.noise_var,
            Matrix2::new(
                d.amp_cov[0][0],
                d.amp_cov[0][1],
                d.amp_cov[1][0],
                d.amp_cov[1][1],
            ),
            d.concentration,
            DVector::from_vec(d.base_measure),
        )
    }
}

/// Per-curve vertical shift and scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeEffects {
    pub shift: f64,
    pub scale: f64,
}

impl AmplitudeEffects {
    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.shift, self.scale)
    }
}

/// Complete latent state of one curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEffects {
    pub amplitude: AmplitudeEffects,
    pub warp: WarpingEffects,
}

/// One observed curve: strictly increasing sampling times in [0, 1] and the
/// matching observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    id: String,
    ts: Vec<f64>,
    ys: Vec<f64>,
}

impl Curve {
    pub fn new(id: String, ts: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if ts.is_empty() || ts.len() != ys.len() {
            return Err(Error::InvalidCurve {
                id,
                reason: format!("{} times for {} values", ts.len(), ys.len()),
            });
        }
        if ts.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidCurve {
                id,
                reason: "sampling times must lie in [0, 1]".into(),
            });
        }
        if ts.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidCurve {
                id,
                reason: "sampling times must be strictly increasing".into(),
            });
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidCurve {
                id,
                reason: "observations must be finite".into(),
            });
        }
        Ok(Self { id, ts, ys })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }
}

/// A collection of curves with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    curves: Vec<Curve>,
}

impl Dataset {
    pub fn new(curves: Vec<Curve>) -> Result<Self> {
        let mut ids: Vec<&str> = curves.iter().map(|c| c.id()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::InvalidDataset {
                reason: "duplicate curve ids".into(),
            });
        }
        if curves.is_empty() {
            return Err(Error::InvalidDataset {
                reason: "no curves".into(),
            });
        }
        Ok(Self { curves })
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn num_curves(&self) -> usize {
        self.curves.len()
    }

    /// Total number of observed values across curves.
    pub fn n_tot(&self) -> usize {
        self.curves.iter().map(Curve::len).sum()
    }

    pub fn curve_index(&self, id: &str) -> Option<usize> {
        self.curves.iter().position(|c| c.id() == id)
    }
}

/// The five statistics that make the complete-data log-likelihood linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    /// Squared norm of the shift-corrected observations.
    pub s_yy: f64,
    /// Scaled design-observation cross products, one entry per shape basis.
    pub s_by: DVector<f64>,
    /// Scaled design Gram matrix, shape-basis square.
    pub s_bb: DMatrix<f64>,
    /// Outer products of centered amplitude effects.
    pub s_a: Matrix2<f64>,
    /// Log warp increments, one entry per increment.
    pub s_w: DVector<f64>,
}

impl SufficientStats {
    pub fn zeros(num_shape_basis: usize, num_increments: usize) -> Self {
        Self {
            s_yy: 0.0,
            s_by: DVector::zeros(num_shape_basis),
            s_bb: DMatrix::zeros(num_shape_basis, num_shape_basis),
            s_a: Matrix2::zeros(),
            s_w: DVector::zeros(num_increments),
        }
    }

    pub fn add_in_place(&mut self, other: &Self) {
        self.s_yy += other.s_yy;
        self.s_by += &other.s_by;
        self.s_bb += &other.s_bb;
        self.s_a += other.s_a;
        self.s_w += &other.s_w;
    }

    /// self <- self + gamma * (mc - self), componentwise.
    pub fn blend_in_place(&mut self, mc: &Self, gamma: f64) {
        self.s_yy += gamma * (mc.s_yy - self.s_yy);
        self.s_by.zip_apply(&mc.s_by, |s, m| *s += gamma * (m - *s));
        self.s_bb.zip_apply(&mc.s_bb, |s, m| *s += gamma * (m - *s));
        self.s_a.zip_apply(&mc.s_a, |s, m| *s += gamma * (m - *s));
        self.s_w.zip_apply(&mc.s_w, |s, m| *s += gamma * (m - *s));
    }

    pub fn is_finite(&self) -> bool {
        self.s_yy.is_finite()
            && self.s_by.iter().all(|v| v.is_finite())
            && self.s_bb.iter().all(|v| v.is_finite())
            && self.s_a.iter().all(|v| v.is_finite())
            && self.s_w.iter().all(|v| v.is_finite())
    }
}

/// Noise-free mean of one curve: shift + scale * base shape at warped times.
pub fn curve_mean(
    params: &ModelParams,
    amplitude: &AmplitudeEffects,
    warp: &WarpingEffects,
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
    ts: &[f64],
) -> Result<Vec<f64>> {
    params.check_bases(basis_f, basis_h)?;
    let design = warp.warped_design(basis_h, basis_f, ts)?;
    let fh = design * params.shape_coeffs();
    Ok(fh
        .iter()
        .map(|v| amplitude.shift + amplitude.scale * v)
        .collect())
}

/// Draw one Dirichlet increment vector, redrawing until every increment
/// clears the positivity guard.
pub(crate) fn draw_warp_increments<R: Rng>(
    concentration: f64,
    base_measure: &DVector<f64>,
    rng: &mut R,
) -> WarpingEffects {
    let gammas: Vec<Gamma<f64>> = base_measure
        .iter()
        .map(|k| Gamma::new(concentration * k, 1.0).expect("positive shape"))
        .collect();
    loop {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum <= 0.0 {
            continue;
        }
        let incr: Vec<f64> = draws.iter().map(|d| d / sum).collect();
        if incr.iter().all(|w| *w >= MIN_INCREMENT) {
            return WarpingEffects::new_unchecked(incr);
        }
    }
}

/// Simulate a dataset of equally spaced curves from the model, returning the
/// observations and the true per-curve effects. Deterministic given seed.
pub fn simulate(
    params: &ModelParams,
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
    n_curves: usize,
    n_points: usize,
    seed: u64,
) -> Result<(Dataset, Vec<CurveEffects>)> {
    params.check_bases(basis_f, basis_h)?;
    if n_curves == 0 || n_points < 2 {
        return Err(Error::InvalidParams {
            reason: format!("need n_curves >= 1 and n_points >= 2, got {n_curves}, {n_points}"),
        });
    }
    let chol = nalgebra::Cholesky::new(*params.amp_cov()).ok_or(Error::InvalidParams {
        reason: "amplitude covariance must be symmetric positive-definite".into(),
    })?;
    let mu0 = amplitude_prior_mean();
    let noise_sd = params.noise_var().sqrt();
    let ts: Vec<f64> = (0..n_points)
        .map(|j| j as f64 / (n_points - 1) as f64)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curves = Vec::with_capacity(n_curves);
    let mut effects = Vec::with_capacity(n_curves);
    for i in 0..n_curves {
        let z = Vector2::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let a = mu0 + chol.l() * z;
        let amplitude = AmplitudeEffects {
            shift: a[0],
            scale: a[1],
        };
        let warp = draw_warp_increments(params.concentration(), params.base_measure(), &mut rng);
        let mean = curve_mean(params, &amplitude, &warp, basis_f, basis_h, &ts)?;
        let ys: Vec<f64> = mean
            .iter()
            .map(|m| m + noise_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        curves.push(Curve::new(format!("c{:03}", i + 1), ts.clone(), ys)?);
        effects.push(CurveEffects { amplitude, warp });
    }
    Ok((Dataset::new(curves)?, effects))
}

/// Log density of the Dirichlet warp increments; negative infinity off the
/// interior of the simplex (boundary states are rejected, never clamped).
pub fn dirichlet_log_density(
    concentration: f64,
    base_measure: &DVector<f64>,
    warp: &WarpingEffects,
) -> f64 {
    if warp.num_increments() != base_measure.len() || !warp.is_interior() {
        return f64::NEG_INFINITY;
    }
    let mut val = ln_gamma(concentration);
    for (w, k) in warp.increments().iter().zip(base_measure.iter()) {
        let a = concentration * k;
        val += (a - 1.0) * w.ln() - ln_gamma(a);
    }
    val
}

/// Log-likelihood of the centered amplitude effects under their bivariate
/// normal law.
pub fn amplitude_loglik(amp_cov: &Matrix2<f64>, effects: &[CurveEffects]) -> Result<f64> {
    let inv = amp_cov.try_inverse().ok_or(Error::InvalidParams {
        reason: "singular amplitude covariance".into(),
    })?;
    let det = amp_cov.determinant();
    if det <= 0.0 {
        return Err(Error::InvalidParams {
            reason: "amplitude covariance must be positive-definite".into(),
        });
    }
    let n = effects.len() as f64;
    let mu0 = amplitude_prior_mean();
    let mut quad = 0.0;
    for e in effects {
        let d = e.amplitude.as_vector() - mu0;
        quad += (d.transpose() * inv * d)[(0, 0)];
    }
    Ok(-n * (2.0 * std::f64::consts::PI).ln() - 0.5 * n * det.ln() - 0.5 * quad)
}

/// Log-likelihood of the warp increments under the Dirichlet law.
pub fn warp_loglik(
    concentration: f64,
    base_measure: &DVector<f64>,
    effects: &[CurveEffects],
) -> Result<f64> {
    let mut total = 0.0;
    for e in effects {
        if !e.warp.is_interior() {
            return Err(Error::InvalidWarp {
                reason: "warp increments must be strictly positive".into(),
            });
        }
        total += dirichlet_log_density(concentration, base_measure, &e.warp);
    }
    Ok(total)
}

/// Gaussian log-likelihood of the observations given the latent effects.
pub fn conditional_loglik(
    params: &ModelParams,
    dataset: &Dataset,
    effects: &[CurveEffects],
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
) -> Result<f64> {
    params.check_bases(basis_f, basis_h)?;
    check_effects(dataset, effects)?;
    let mut rss = 0.0;
    for (curve, e) in dataset.curves().iter().zip(effects.iter()) {
        let mean = curve_mean(params, &e.amplitude, &e.warp, basis_f, basis_h, curve.ts())?;
        rss += curve
            .ys()
            .iter()
            .zip(mean.iter())
            .map(|(y, m)| (y - m) * (y - m))
            .sum::<f64>();
    }
    let n_tot = dataset.n_tot() as f64;
    Ok(-0.5 * n_tot * (2.0 * std::f64::consts::PI * params.noise_var()).ln()
        - 0.5 * rss / params.noise_var())
}

/// Complete-data log-likelihood: amplitude, warp, and observation parts.
pub fn complete_loglik(
    params: &ModelParams,
    dataset: &Dataset,
    effects: &[CurveEffects],
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
) -> Result<f64> {
    let la = amplitude_loglik(params.amp_cov(), effects)?;
    let lw = warp_loglik(params.concentration(), params.base_measure(), effects)?;
    let ly = conditional_loglik(params, dataset, effects, basis_f, basis_h)?;
    Ok(la + lw + ly)
}

fn check_effects(dataset: &Dataset, effects: &[CurveEffects]) -> Result<()> {
    if dataset.num_curves() != effects.len() {
        return Err(Error::InvalidDataset {
            reason: format!(
                "{} curves but {} effect sets",
                dataset.num_curves(),
                effects.len()
            ),
        });
    }
    Ok(())
}

/// Sufficient statistics of one curve given its latent effects.
pub(crate) fn curve_suff_stats(
    curve: &Curve,
    effects: &CurveEffects,
    design: &SparseDesign,
    out: &mut SufficientStats,
) {
    let a = &effects.amplitude;
    let resid: Vec<f64> = curve.ys().iter().map(|y| y - a.shift).collect();
    out.s_yy = resid.iter().map(|r| r * r).sum();
    out.s_by.fill(0.0);
    design.accumulate_tr_mul(&resid, a.scale, out.s_by.as_mut_slice());
    out.s_bb.fill(0.0);
    design.accumulate_gram(a.scale * a.scale, &mut out.s_bb);
    let d = a.as_vector() - amplitude_prior_mean();
    out.s_a = d * d.transpose();
    for (o, w) in out.s_w.iter_mut().zip(effects.warp.increments()) {
        *o = w.ln();
    }
}

/// The five statistics summed over all curves.
pub fn suff_stats(
    dataset: &Dataset,
    effects: &[CurveEffects],
    basis_f: &BasisSpec,
    basis_h: &BasisSpec,
) -> Result<SufficientStats> {
    check_effects(dataset, effects)?;
    let kf = basis_f.num_basis();
    let m = basis_h.num_basis() - 1;
    let mut total = SufficientStats::zeros(kf, m);
    let mut per_curve = SufficientStats::zeros(kf, m);
    let mut design = SparseDesign::new(basis_f);
    for (curve, e) in dataset.curves().iter().zip(effects.iter()) {
        if e.warp.num_increments() != m {
            return Err(Error::InvalidWarp {
                reason: "warp dimension does not match the warp basis".into(),
            });
        }
        design.evaluate_warped(&e.warp, basis_h, basis_f, curve.ts())?;
        curve_suff_stats(curve, e, &design, &mut per_curve);
        total.add_in_place(&per_curve);
    }
    Ok(total)
}

/// The two benchmark simulation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Shape1,
    Shape2,
}

impl Scenario {
    /// Shape and warp bases for the scenario (both cubic).
    pub fn bases(&self) -> (BasisSpec, BasisSpec) {
        let (kf, kh) = match self {
            Scenario::Shape1 => (5, 6),
            Scenario::Shape2 => (11, 9),
        };
        (
            BasisSpec::new(kf, 4).expect("valid scenario basis"),
            BasisSpec::new(kh, 4).expect("valid scenario basis"),
        )
    }

    /// True generating parameters of the scenario.
    pub fn params(&self) -> ModelParams {
        let alpha = match self {
            Scenario::Shape1 => vec![0.0, -200.0, -500.0, -200.0, 0.0],
            Scenario::Shape2 => vec![
                -350.0, -300.0, -700.0, -100.0, 400.0, -100.0, -700.0, 100.0, -800.0, 400.0,
                -450.0,
            ],
        };
        let (_, basis_h) = self.bases();
        ModelParams::with_default_base_measure(
            DVector::from_vec(alpha),
            25.0,
            Matrix2::new(400.0, 0.0, 0.0, 0.0025),
            10.0,
            &basis_h,
        )
        .expect("valid scenario parameters")
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shape1" | "shape-1" => Ok(Scenario::Shape1),
            "shape2" | "shape-2" => Ok(Scenario::Shape2),
            other => Err(Error::InvalidConfig {
                reason: format!("unknown scenario `{other}` (expected shape1 or shape2)"),
            }),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenario::Shape1 => write!(f, "shape1"),
            Scenario::Shape2 => write!(f, "shape2"),
        }
    }
}
