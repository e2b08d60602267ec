//! Clamped B-spline bases on [0, 1] and monotone warp evaluation.
//!
//! Two bases drive the whole model: one for the common base shape and one
//! for the per-curve warping functions. Both are clamped (boundary knots
//! repeated `order` times) with equally spaced interior knots, so every
//! basis here is fully determined by its order and its number of functions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense basis evaluation matrix: one row per evaluation point, one column
/// per basis function. Rows sum to one and carry at most `order` nonzeros.
pub type BasisMatrix = DMatrix<f64>;

/// A clamped B-spline basis on [0, 1] with equally spaced interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    order: usize,
    knots: Vec<f64>,
}

impl BasisSpec {
    /// Build the basis with `num_basis` functions of the given order
    /// (order 4 = cubic). The knot vector is clamped with the
    /// `num_basis - order` interior knots equally spaced in (0, 1).
    pub fn new(num_basis: usize, order: usize) -> Result<Self> {
        if order < 2 || num_basis < order {
            return Err(Error::InvalidBasis { num_basis, order });
        }
        let n_interior = num_basis - order;
        let mut knots = Vec::with_capacity(num_basis + order);
        knots.extend(std::iter::repeat(0.0).take(order));
        for j in 1..=n_interior {
            knots.push(j as f64 / (n_interior + 1) as f64);
        }
        knots.extend(std::iter::repeat(1.0).take(order));
        Ok(Self { order, knots })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Greville abscissae: per-function averages of `order - 1` interior
    /// knots. Using them as coefficients reproduces the identity function.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.order - 1;
        (0..self.num_basis())
            .map(|k| self.knots[k + 1..=k + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// Evaluate all basis functions at the given points.
    ///
    /// Points must lie in [0, 1]; the right endpoint is assigned to the last
    /// nonempty span so the final basis function evaluates to one at t = 1.
    pub fn evaluate(&self, ts: &[f64]) -> Result<BasisMatrix> {
        let k = self.num_basis();
        let mut out = DMatrix::zeros(ts.len(), k);
        let mut scratch = EvalScratch::new(self.order);
        for (i, &t) in ts.iter().enumerate() {
            check_domain(t)?;
            let first = self.nonzero_into(t, &mut scratch);
            for (j, &v) in scratch.vals.iter().enumerate() {
                out[(i, first + j)] = v;
            }
        }
        Ok(out)
    }

    /// Knot span index s with knots[s] <= t < knots[s+1]; t = 1 goes to the
    /// last nonempty span. Caller guarantees t in [0, 1].
    fn span_of(&self, t: f64) -> usize {
        let p = self.order - 1;
        let last = self.num_basis() - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        let mut lo = p;
        let mut hi = last + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Cox-de Boor recursion for the `order` nonzero functions at t.
    /// Fills `scratch.vals` and returns the index of the first of them.
    fn nonzero_into(&self, t: f64, scratch: &mut EvalScratch) -> usize {
        let p = self.order - 1;
        let span = self.span_of(t);
        let (left, right, vals) = scratch.parts();
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        span - p
    }
}

fn check_domain(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfDomain { value: t });
    }
    Ok(())
}

/// Reusable scratch for span evaluation; one allocation per sweep.
pub(crate) struct EvalScratch {
    left: Vec<f64>,
    right: Vec<f64>,
    vals: Vec<f64>,
}

impl EvalScratch {
    pub(crate) fn new(order: usize) -> Self {
        Self {
            left: vec![0.0; order],
            right: vec![0.0; order],
            vals: vec![0.0; order],
        }
    }

    fn parts(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.left, &mut self.right, &mut self.vals)
    }
}

/// Positive simplex increments defining a monotone spline warp.
///
/// The warp coefficients are the cumulative sums of the increments with a
/// leading zero, so the warp is pinned to h(0) = 0, h(1) = 1 and is strictly
/// increasing whenever every increment is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpingEffects {
    increments: Vec<f64>,
}

impl WarpingEffects {
    /// Validate and wrap a vector of increments: all entries strictly
    /// positive and summing to one within 1e-12.
    pub fn new(increments: Vec<f64>) -> Result<Self> {
        if increments.is_empty() {
            return Err(Error::InvalidWarp {
                reason: "empty increment vector".into(),
            });
        }
        if increments.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidWarp {
                reason: "increments must be finite and strictly positive".into(),
            });
        }
        let sum: f64 = increments.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWarp {
                reason: format!("increments sum to {sum}, expected 1"),
            });
        }
        Ok(Self { increments })
    }

    /// Wrap without validation. Used where the construction is total (the
    /// softmax image) and the caller screens degenerate outputs itself.
    pub(crate) fn new_unchecked(increments: Vec<f64>) -> Self {
        Self { increments }
    }

    /// The identity warp h(t) = t: successive differences of the Greville
    /// abscissae of the warp basis.
    pub fn identity(basis_h: &BasisSpec) -> Self {
        let xi = basis_h.greville();
        Self {
            increments: xi.windows(2).map(|w| w[1] - w[0]).collect(),
        }
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn num_increments(&self) -> usize {
        self.increments.len()
    }

    /// All increments strictly positive (interior of the simplex).
    pub fn is_interior(&self) -> bool {
        self.increments.iter().all(|w| *w > 0.0 && w.is_finite())
    }

    /// Warp spline coefficients: leading zero then cumulative sums, with the
    /// final coefficient pinned to exactly one.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut beta = Vec::with_capacity(self.increments.len() + 1);
        beta.push(0.0);
        let mut acc = 0.0;
        for w in &self.increments {
            acc += w;
            beta.push(acc);
        }
        *beta.last_mut().expect("nonempty") = 1.0;
        beta
    }

    /// Evaluate the warp at the given points: h(t) = sum_k beta_k B_k(t).
    pub fn evaluate(&self, basis_h: &BasisSpec, ts: &[f64]) -> Result<Vec<f64>> {
        self.check_against(basis_h)?;
        let beta = self.coefficients();
        let mut scratch = EvalScratch::new(basis_h.order());
        let mut out = Vec::with_capacity(ts.len());
        for &t in ts {
            check_domain(t)?;
            let first = basis_h.nonzero_into(t, &mut scratch);
            let h: f64 = scratch
                .vals
                .iter()
                .enumerate()
                .map(|(j, v)| v * beta[first + j])
                .sum();
            // beta lies in [0, 1]; clamp floating dust at the boundaries.
            out.push(h.clamp(0.0, 1.0));
        }
        Ok(out)
    }

    /// Shape-basis design matrix at warped times: entry (j, k) is the k-th
    /// shape basis function evaluated at h(t_j).
    pub fn warped_design(
        &self,
        basis_h: &BasisSpec,
        basis_f: &BasisSpec,
        ts: &[f64],
    ) -> Result<BasisMatrix> {
        let mut sparse = SparseDesign::new(basis_f);
        sparse.evaluate_warped(self, basis_h, basis_f, ts)?;
        Ok(sparse.to_dense())
    }

    fn check_against(&self, basis_h: &BasisSpec) -> Result<()> {
        if self.increments.len() + 1 != basis_h.num_basis() {
            return Err(Error::InvalidWarp {
                reason: format!(
                    "{} increments do not match a warp basis with {} functions",
                    self.increments.len(),
                    basis_h.num_basis()
                ),
            });
        }
        // Re-validate on use: unchecked construction is possible internally.
        if !self.is_interior() {
            return Err(Error::InvalidWarp {
                reason: "increments must be finite and strictly positive".into(),
            });
        }
        let sum: f64 = self.increments.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWarp {
                reason: format!("increments sum to {sum}, expected 1"),
            });
        }
        Ok(())
    }
}

/// Row-banded design matrix: `order` contiguous nonzeros per row. This is
/// the storage the samplers run on; the dense form is derived from it.
#[derive(Debug, Clone)]
pub(crate) struct SparseDesign {
    num_basis: usize,
    order: usize,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl SparseDesign {
    pub(crate) fn new(basis_f: &BasisSpec) -> Self {
        Self {
            num_basis: basis_f.num_basis(),
            order: basis_f.order(),
            offsets: Vec::new(),
            values: Vec::new(),
        }
    }

    pub(crate) fn nrows(&self) -> usize {
        self.offsets.len()
    }

    /// Fill with shape-basis rows at warped times h(t_j). Reuses storage.
    pub(crate) fn evaluate_warped(
        &mut self,
        warp: &WarpingEffects,
        basis_h: &BasisSpec,
        basis_f: &BasisSpec,
        ts: &[f64],
    ) -> Result<()> {
        warp.check_against(basis_h)?;
        debug_assert_eq!(self.num_basis, basis_f.num_basis());
        let beta = warp.coefficients();
        let mut scratch_h = EvalScratch::new(basis_h.order());
        let mut scratch_f = EvalScratch::new(basis_f.order());
        self.offsets.clear();
        self.values.clear();
        self.offsets.reserve(ts.len());
        self.values.reserve(ts.len() * self.order);
        for &t in ts {
            check_domain(t)?;
            let first_h = basis_h.nonzero_into(t, &mut scratch_h);
            let h: f64 = scratch_h
                .vals
                .iter()
                .enumerate()
                .map(|(j, v)| v * beta[first_h + j])
                .sum();
            let h = h.clamp(0.0, 1.0);
            let first_f = basis_f.nonzero_into(h, &mut scratch_f);
            self.offsets.push(first_f);
            self.values.extend_from_slice(&scratch_f.vals);
        }
        Ok(())
    }

    /// out[j] = row_j . coeffs
    pub(crate) fn mul_coeffs_into(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.nrows());
        for (j, o) in out.iter_mut().enumerate() {
            let first = self.offsets[j];
            let row = &self.values[j * self.order..(j + 1) * self.order];
            *o = row
                .iter()
                .enumerate()
                .map(|(l, v)| v * coeffs[first + l])
                .sum();
        }
    }

    /// out += scale * (rows^T rows); `out` must be num_basis x num_basis.
    pub(crate) fn accumulate_gram(&self, scale: f64, out: &mut DMatrix<f64>) {
        debug_assert_eq!(out.nrows(), self.num_basis);
        for j in 0..self.nrows() {
            let first = self.offsets[j];
            let row = &self.values[j * self.order..(j + 1) * self.order];
            for a in 0..self.order {
                let va = scale * row[a];
                for b in a..self.order {
                    let v = va * row[b];
                    out[(first + a, first + b)] += v;
                    if b != a {
                        out[(first + b, first + a)] += v;
                    }
                }
            }
        }
    }

    /// out += scale * rows^T v; `out` must have num_basis entries.
    pub(crate) fn accumulate_tr_mul(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.nrows());
        debug_assert_eq!(out.len(), self.num_basis);
        for j in 0..self.nrows() {
            let first = self.offsets[j];
            let row = &self.values[j * self.order..(j + 1) * self.order];
            let s = scale * v[j];
            for (l, r) in row.iter().enumerate() {
                out[first + l] += s * r;
            }
        }
    }

    /// out <- (1 - gamma) * out + gamma * scale * rows, for the running
    /// conditional-mean accumulators.
    pub(crate) fn blend_into_dense(&self, scale: f64, gamma: f64, out: &mut DMatrix<f64>) {
        debug_assert_eq!(out.nrows(), self.nrows());
        debug_assert_eq!(out.ncols(), self.num_basis);
        if gamma != 1.0 {
            *out *= 1.0 - gamma;
        } else {
            out.fill(0.0);
        }
        let g = gamma * scale;
        for j in 0..self.nrows() {
            let first = self.offsets[j];
            let row = &self.values[j * self.order..(j + 1) * self.order];
            for (l, v) in row.iter().enumerate() {
                out[(j, first + l)] += g * v;
            }
        }
    }

    pub(crate) fn to_dense(&self) -> BasisMatrix {
        let mut out = DMatrix::zeros(self.nrows(), self.num_basis);
        for j in 0..self.nrows() {
            let first = self.offsets[j];
            let row = &self.values[j * self.order..(j + 1) * self.order];
            for (l, v) in row.iter().enumerate() {
                out[(j, first + l)] = *v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Textbook recursive Cox-de Boor, written independently of the
    /// windowed evaluator above. The right endpoint is closed on the last
    /// nonempty interval.
    fn naive_basis(k: usize, m: usize, t: f64, knots: &[f64]) -> f64 {
        if m == 1 {
            let closes_domain = knots[k + 1] >= 1.0;
            let inside = if closes_domain {
                knots[k] <= t && t <= knots[k + 1] && knots[k] < knots[k + 1]
            } else {
                knots[k] <= t && t < knots[k + 1]
            };
            return if inside { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[k + m - 1] - knots[k];
        if d1 > 0.0 {
            v += (t - knots[k]) / d1 * naive_basis(k, m - 1, t, knots);
        }
        let d2 = knots[k + m] - knots[k + 1];
        if d2 > 0.0 {
            v += (knots[k + m] - t) / d2 * naive_basis(k + 1, m - 1, t, knots);
        }
        v
    }

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn knot_layouts_match_equal_spacing() {
        let b = BasisSpec::new(5, 4).unwrap();
        assert_eq!(b.knots(), &[0.0, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0]);
        let b = BasisSpec::new(4, 4).unwrap();
        assert_eq!(b.knots(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let b = BasisSpec::new(11, 4).unwrap();
        assert_eq!(b.knots().len() - b.order(), 11);
        for j in 1..=7 {
            assert_abs_diff_eq!(b.knots()[3 + j], j as f64 / 8.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_too_few_basis_functions() {
        assert!(matches!(
            BasisSpec::new(3, 4),
            Err(Error::InvalidBasis { .. })
        ));
        assert!(matches!(
            BasisSpec::new(2, 1),
            Err(Error::InvalidBasis { .. })
        ));
    }

    #[test]
    fn clamped_endpoints_pick_single_function() {
        for (k, order) in [(4, 4), (5, 4), (6, 4), (9, 3), (11, 4)] {
            let b = BasisSpec::new(k, order).unwrap();
            let m = b.evaluate(&[0.0, 1.0]).unwrap();
            assert_abs_diff_eq!(m[(0, 0)], 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(m[(1, k - 1)], 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(m.row(0).sum(), 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(m.row(1).sum(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn bernstein_cubic_midpoint() {
        let b = BasisSpec::new(4, 4).unwrap();
        let m = b.evaluate(&[0.5]).unwrap();
        let expected = [0.125, 0.375, 0.375, 0.125];
        for (k, e) in expected.iter().enumerate() {
            assert_abs_diff_eq!(m[(0, k)], e, epsilon = 1e-15);
        }
    }

    #[test]
    fn matches_naive_recursion_on_grid() {
        for (k, order) in [(4, 4), (5, 4), (7, 3), (11, 4), (6, 2)] {
            let b = BasisSpec::new(k, order).unwrap();
            let ts = grid(211);
            let m = b.evaluate(&ts).unwrap();
            for (i, &t) in ts.iter().enumerate() {
                for col in 0..k {
                    let naive = naive_basis(col, order, t, b.knots());
                    assert_abs_diff_eq!(m[(i, col)], naive, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn domain_violations_error() {
        let b = BasisSpec::new(5, 4).unwrap();
        assert!(matches!(
            b.evaluate(&[-0.01]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            b.evaluate(&[1.0 + 1e-9]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            b.evaluate(&[f64::NAN]),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn greville_of_bernstein_cubic() {
        let b = BasisSpec::new(4, 4).unwrap();
        let xi = b.greville();
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, e) in xi.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn greville_reproduces_identity() {
        for (k, order) in [(4, 4), (5, 4), (6, 4), (9, 4), (11, 4), (3, 3)] {
            let b = BasisSpec::new(k, order).unwrap();
            let xi = b.greville();
            assert_eq!(xi[0], 0.0);
            assert_eq!(*xi.last().unwrap(), 1.0);
            let ts = grid(1000);
            let m = b.evaluate(&ts).unwrap();
            for (i, &t) in ts.iter().enumerate() {
                let s: f64 = (0..k).map(|c| m[(i, c)] * xi[c]).sum();
                assert_abs_diff_eq!(s, t, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn identity_warp_is_identity_function() {
        let basis_h = BasisSpec::new(6, 4).unwrap();
        let w = WarpingEffects::identity(&basis_h);
        let ts = grid(501);
        let h = w.evaluate(&basis_h, &ts).unwrap();
        for (ht, t) in h.iter().zip(ts.iter()) {
            assert_abs_diff_eq!(ht, t, epsilon = 1e-12);
        }
    }

    #[test]
    fn warp_endpoints_pinned() {
        let basis_h = BasisSpec::new(6, 4).unwrap();
        let w = WarpingEffects::new(vec![0.4, 0.1, 0.2, 0.1, 0.2]).unwrap();
        let h = w.evaluate(&basis_h, &[0.0, 1.0]).unwrap();
        assert_eq!(h[0], 0.0);
        assert_eq!(h[1], 1.0);
    }

    #[test]
    fn warp_rejects_simplex_violations() {
        assert!(WarpingEffects::new(vec![0.5, 0.4]).is_err());
        assert!(WarpingEffects::new(vec![0.5, 0.5, 0.1]).is_err());
        assert!(WarpingEffects::new(vec![1.2, -0.2]).is_err());
        assert!(WarpingEffects::new(vec![]).is_err());
        let basis_h = BasisSpec::new(4, 4).unwrap();
        let bad = WarpingEffects::new_unchecked(vec![0.5, 0.0, 0.5]);
        assert!(bad.evaluate(&basis_h, &[0.5]).is_err());
    }

    #[test]
    fn warp_dimension_mismatch_errors() {
        let basis_h = BasisSpec::new(6, 4).unwrap();
        let w = WarpingEffects::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            w.evaluate(&basis_h, &[0.5]),
            Err(Error::InvalidWarp { .. })
        ));
    }

    #[test]
    fn identity_warp_design_equals_plain_basis() {
        let basis_h = BasisSpec::new(6, 4).unwrap();
        let basis_f = BasisSpec::new(5, 4).unwrap();
        let w = WarpingEffects::identity(&basis_h);
        let ts = grid(101);
        let warped = w.warped_design(&basis_h, &basis_f, &ts).unwrap();
        let plain = basis_f.evaluate(&ts).unwrap();
        assert_abs_diff_eq!((warped - plain).abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn warped_design_rows_sum_to_one() {
        let basis_h = BasisSpec::new(6, 4).unwrap();
        let basis_f = BasisSpec::new(5, 4).unwrap();
        let w = WarpingEffects::new(vec![0.05, 0.1, 0.35, 0.3, 0.2]).unwrap();
        let ts = grid(57);
        let m = w.warped_design(&basis_h, &basis_f, &ts).unwrap();
        for i in 0..m.nrows() {
            assert_abs_diff_eq!(m.row(i).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn shape1_base_at_endpoints_and_knot() {
        // Base-shape coefficients of the first benchmark scenario; fitted
        // value at t = 0 is the first coefficient by the clamped endpoint.
        let basis_f = BasisSpec::new(5, 4).unwrap();
        let alpha = [0.0, -200.0, -500.0, -200.0, 0.0];
        let m = basis_f.evaluate(&[0.0, 0.5, 1.0]).unwrap();
        let f = |i: usize| (0..5).map(|k| m[(i, k)] * alpha[k]).sum::<f64>();
        assert_abs_diff_eq!(f(0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f(2), 0.0, epsilon = 1e-12);
        // Frozen from the independent recursive evaluator: the row at the
        // interior knot is (0, 1/4, 1/2, 1/4, 0), so f(0.5) = -350.
        assert_abs_diff_eq!(f(1), -350.0, epsilon = 1e-12);
        for (k, e) in [0.0, 0.25, 0.5, 0.25, 0.0].iter().enumerate() {
            assert_abs_diff_eq!(m[(1, k)], e, epsilon = 1e-14);
            assert_abs_diff_eq!(naive_basis(k, 4, 0.5, basis_f.knots()), e, epsilon = 1e-14);
        }
    }

    fn basis_strategy() -> impl Strategy<Value = (usize, usize)> {
        (2usize..=12).prop_flat_map(|k| (Just(k), 2usize..=k.min(6)))
    }

    proptest! {
        #[test]
        fn partition_of_unity((k, order) in basis_strategy(), t in 0.0f64..=1.0) {
            let b = BasisSpec::new(k, order).unwrap();
            let m = b.evaluate(&[t]).unwrap();
            prop_assert!((m.row(0).sum() - 1.0).abs() < 1e-12);
            prop_assert!(m.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn local_support((k, order) in basis_strategy(), t in 0.0f64..=1.0) {
            let b = BasisSpec::new(k, order).unwrap();
            let m = b.evaluate(&[t]).unwrap();
            let nonzeros = m.iter().filter(|v| **v != 0.0).count();
            prop_assert!(nonzeros <= order);
        }

        #[test]
        fn warp_monotone_for_positive_increments(
            raw in proptest::collection::vec(0.05f64..1.0, 3..8),
        ) {
            let sum: f64 = raw.iter().sum();
            let incr: Vec<f64> = raw.iter().map(|w| w / sum).collect();
            let k = incr.len() + 1;
            let basis_h = BasisSpec::new(k, k.min(4)).unwrap();
            let w = WarpingEffects::new(incr).unwrap();
            let ts = grid(200);
            let h = w.evaluate(&basis_h, &ts).unwrap();
            for pair in h.windows(2) {
                prop_assert!(pair[0] < pair[1]);
            }
        }
    }
}
