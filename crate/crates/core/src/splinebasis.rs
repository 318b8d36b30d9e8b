//! B-spline bases, difference penalties and the design rows of the four mean
//! structures.
//!
//! Coefficient ordering for the tensor-product surface is l-major: the
//! coefficient of `B^t_l(t)·B^x_r(x)` sits at index `l·d_x + r`. The design
//! rows, the penalties and the evaluation grids all share this ordering.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Relative slack allowed when checking that a point lies inside the domain.
const DOMAIN_SLACK: f64 = 1e-10;

/// B-spline basis on a clamped uniform knot sequence.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UnivariateBasis {
    degree: usize,
    num_basis: usize,
    knots: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl UnivariateBasis {
    /// `num_basis` functions of the given degree on `[lo, hi]`, with the end
    /// knots repeated `degree + 1` times and the interior knots equally spaced.
    pub fn clamped_uniform(lo: f64, hi: f64, num_basis: usize, degree: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!("basis domain [{lo}, {hi}] is empty or not finite")));
        }
        if num_basis < degree + 1 {
            return Err(Error::InvalidDimension(format!(
                "{num_basis} basis functions cannot carry degree {degree} (need at least {})",
                degree + 1
            )));
        }
        let interior = num_basis - degree - 1;
        let mut knots = Vec::with_capacity(num_basis + degree + 1);
        knots.extend(core::iter::repeat_n(lo, degree + 1));
        let width = hi - lo;
        for k in 1..=interior {
            knots.push(lo + width * k as f64 / (interior + 1) as f64);
        }
        knots.extend(core::iter::repeat_n(hi, degree + 1));
        Ok(Self { degree, num_basis, knots, lo, hi })
    }

    pub fn cubic(lo: f64, hi: f64, num_basis: usize) -> Result<Self> {
        Self::clamped_uniform(lo, hi, num_basis, 3)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn check(&self, u: f64) -> Result<f64> {
        let slack = DOMAIN_SLACK * (self.hi - self.lo);
        if !(u >= self.lo - slack && u <= self.hi + slack) {
            return Err(Error::Domain { value: u, lo: self.lo, hi: self.hi });
        }
        Ok(u.clamp(self.lo, self.hi))
    }

    /// Writes the `degree + 1` possibly-nonzero basis values at `u` into
    /// `out[..=degree]` and returns the index of the first one.
    pub fn eval_local(&self, u: f64, out: &mut [f64]) -> Result<usize> {
        let u = self.check(u)?;
        let p = self.degree;
        let n = self.num_basis;
        // knot span s with knots[s] <= u < knots[s+1], using the last span at u = hi
        let span = if u >= self.hi {
            n - 1
        } else {
            let mut lo = p;
            let mut hi = n;
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if u < self.knots[mid] {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            lo
        };
        let mut left = [0.0; 16];
        let mut right = [0.0; 16];
        assert!(p < 16, "degree above 15 is not supported");
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = u - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        Ok(span - p)
    }

    /// Full basis vector `(B_1(u), …, B_d(u))`.
    pub fn eval(&self, u: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_basis];
        self.eval_into(u, &mut out)?;
        Ok(out)
    }

    /// Like [`eval`](Self::eval) but into a caller-provided zeroed buffer.
    pub fn eval_into(&self, u: f64, out: &mut [f64]) -> Result<()> {
        let mut local = [0.0; 16];
        let first = self.eval_local(u, &mut local)?;
        out[first..first + self.degree + 1].copy_from_slice(&local[..self.degree + 1]);
        Ok(())
    }
}

/// Symmetric positive semi-definite roughness penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix(Mat);

impl PenaltyMatrix {
    pub fn new(m: Mat) -> Self {
        Self(m)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(Mat::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_matrix(self) -> Mat {
        self.0
    }

    /// Embeds the penalty in the top-left corner of a `width × width` zero
    /// matrix, leaving unpenalized nuisance columns after it.
    pub fn padded(&self, width: usize) -> Mat {
        let d = self.dim();
        assert!(width >= d);
        let mut out = Mat::zeros(width, width);
        for i in 0..d {
            out.row_mut(i)[..d].copy_from_slice(self.0.row(i));
        }
        out
    }
}

/// `D₂ᵀD₂` for the `(d−2) × d` second-difference operator.
pub fn second_difference_penalty(d: usize) -> Result<PenaltyMatrix> {
    if d < 3 {
        return Err(Error::InvalidDimension(format!("second differences need d >= 3, got {d}")));
    }
    let mut p = Mat::zeros(d, d);
    const ROW: [f64; 3] = [1.0, -2.0, 1.0];
    for k in 0..d - 2 {
        for (a, wa) in ROW.iter().enumerate() {
            for (b, wb) in ROW.iter().enumerate() {
                p[(k + a, k + b)] += wa * wb;
            }
        }
    }
    Ok(PenaltyMatrix(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MeanKind {
    /// `β₀ + β_t t + β_x x`
    Linear,
    /// `β₀ + β_t t + β_x x + β_tx t x`
    LinearInteraction,
    /// `f(t) + β_x x` with `f` a penalized spline
    PartialLinear,
    /// `h(t, x)` as a tensor-product penalized spline
    BivariateSmooth,
    /// `η(t)` alone; the mean under "no effect of x"
    TimeSmooth,
}

/// A mean structure together with the bases it needs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanStructure {
    kind: MeanKind,
    t_basis: Option<UnivariateBasis>,
    x_basis: Option<UnivariateBasis>,
}

/// One nonzero of a placement matrix: design position, time-feature index, weight.
pub type Placement = (usize, usize, f64);

impl MeanStructure {
    pub fn linear() -> Self {
        Self { kind: MeanKind::Linear, t_basis: None, x_basis: None }
    }

    pub fn linear_interaction() -> Self {
        Self { kind: MeanKind::LinearInteraction, t_basis: None, x_basis: None }
    }

    pub fn partial_linear(t_basis: UnivariateBasis) -> Self {
        Self { kind: MeanKind::PartialLinear, t_basis: Some(t_basis), x_basis: None }
    }

    pub fn bivariate(t_basis: UnivariateBasis, x_basis: UnivariateBasis) -> Self {
        Self { kind: MeanKind::BivariateSmooth, t_basis: Some(t_basis), x_basis: Some(x_basis) }
    }

    pub fn time_smooth(t_basis: UnivariateBasis) -> Self {
        Self { kind: MeanKind::TimeSmooth, t_basis: Some(t_basis), x_basis: None }
    }

    pub fn kind(&self) -> MeanKind {
        self.kind
    }

    pub fn t_basis(&self) -> Option<&UnivariateBasis> {
        self.t_basis.as_ref()
    }

    pub fn x_basis(&self) -> Option<&UnivariateBasis> {
        self.x_basis.as_ref()
    }

    fn dt(&self) -> usize {
        self.t_basis.as_ref().map_or(0, UnivariateBasis::num_basis)
    }

    fn dx(&self) -> usize {
        self.x_basis.as_ref().map_or(0, UnivariateBasis::num_basis)
    }

    /// Length of `B(t, x)`.
    pub fn dim(&self) -> usize {
        match self.kind {
            MeanKind::Linear => 3,
            MeanKind::LinearInteraction => 4,
            MeanKind::PartialLinear => self.dt() + 1,
            MeanKind::BivariateSmooth => self.dt() * self.dx(),
            MeanKind::TimeSmooth => self.dt(),
        }
    }

    /// True when the structure has smoothing parameters to select.
    pub fn is_penalized(&self) -> bool {
        !matches!(self.kind, MeanKind::Linear | MeanKind::LinearInteraction)
    }

    /// Whether `λ_x` enters the penalty at all.
    pub fn uses_lambda_x(&self) -> bool {
        self.kind == MeanKind::BivariateSmooth
    }

    pub fn design_row_into(&self, t: f64, x: f64, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.dim());
        out.iter_mut().for_each(|v| *v = 0.0);
        match self.kind {
            MeanKind::Linear => {
                out.copy_from_slice(&[1.0, t, x]);
            }
            MeanKind::LinearInteraction => {
                out.copy_from_slice(&[1.0, t, x, t * x]);
            }
            MeanKind::PartialLinear => {
                let bt = self.t_basis.as_ref().expect("partial linear carries a t basis");
                bt.eval_into(t, &mut out[..bt.num_basis()])?;
                out[bt.num_basis()] = x;
            }
            MeanKind::TimeSmooth => {
                let bt = self.t_basis.as_ref().expect("time smooth carries a t basis");
                bt.eval_into(t, out)?;
            }
            MeanKind::BivariateSmooth => {
                let bt = self.t_basis.as_ref().expect("bivariate carries a t basis");
                let bx = self.x_basis.as_ref().expect("bivariate carries an x basis");
                let (mut lt, mut lx) = ([0.0; 16], [0.0; 16]);
                let ft = bt.eval_local(t, &mut lt)?;
                let fx = bx.eval_local(x, &mut lx)?;
                let dx = bx.num_basis();
                for (a, vt) in lt[..=bt.degree()].iter().enumerate() {
                    for (b, vx) in lx[..=bx.degree()].iter().enumerate() {
                        out[(ft + a) * dx + fx + b] = vt * vx;
                    }
                }
            }
        }
        Ok(())
    }

    /// The two unscaled penalty components `(P_t-part, P_x-part)`, each
    /// `dim × dim`, so that `P_λ = λ_t·A + λ_x·B`.
    pub fn penalty_parts(&self) -> Result<(Option<Mat>, Option<Mat>)> {
        let dim = self.dim();
        Ok(match self.kind {
            MeanKind::Linear | MeanKind::LinearInteraction => (None, None),
            MeanKind::PartialLinear | MeanKind::TimeSmooth => {
                let pt = second_difference_penalty(self.dt())?;
                (Some(pt.padded(dim)), None)
            }
            MeanKind::BivariateSmooth => {
                let pt = second_difference_penalty(self.dt())?.into_matrix();
                let px = second_difference_penalty(self.dx())?.into_matrix();
                (Some(pt.kron(&Mat::identity(self.dx()))), Some(Mat::identity(self.dt()).kron(&px)))
            }
        })
    }

    // The fast normal-equation path writes every design row as
    // B(t, x) = Σ_k c_k(x)·E_k·a(t), with a(t) a short vector of time
    // features shared by all visits and c(x) a few covariate features.

    /// Number of time features `a(t)`.
    pub fn time_feature_dim(&self) -> usize {
        match self.kind {
            MeanKind::Linear | MeanKind::LinearInteraction => 2,
            _ => self.dt(),
        }
    }

    pub fn time_features_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match self.kind {
            MeanKind::Linear | MeanKind::LinearInteraction => {
                out[0] = 1.0;
                out[1] = t;
                Ok(())
            }
            _ => {
                out.iter_mut().for_each(|v| *v = 0.0);
                self.t_basis.as_ref().expect("spline structures carry a t basis").eval_into(t, out)
            }
        }
    }

    /// Weights `w` with `wᵀa(t) = 1` for every `t`.
    pub fn unit_time_functional(&self) -> Vec<f64> {
        match self.kind {
            MeanKind::Linear | MeanKind::LinearInteraction => vec![1.0, 0.0],
            _ => vec![1.0; self.dt()],
        }
    }

    /// Number of covariate features `c(x)`.
    pub fn covariate_feature_dim(&self) -> usize {
        match self.kind {
            MeanKind::BivariateSmooth => self.dx(),
            MeanKind::TimeSmooth => 1,
            _ => 2,
        }
    }

    pub fn covariate_features_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        match self.kind {
            MeanKind::BivariateSmooth => {
                out.iter_mut().for_each(|v| *v = 0.0);
                self.x_basis.as_ref().expect("bivariate carries an x basis").eval_into(x, out)
            }
            MeanKind::TimeSmooth => {
                out[0] = 1.0;
                Ok(())
            }
            _ => {
                out[0] = 1.0;
                out[1] = x;
                Ok(())
            }
        }
    }

    /// Sparse `E_k` for each covariate feature `k`.
    pub fn placements(&self) -> Vec<Vec<Placement>> {
        let dt = self.dt();
        match self.kind {
            MeanKind::Linear => vec![vec![(0, 0, 1.0), (1, 1, 1.0)], vec![(2, 0, 1.0)]],
            MeanKind::LinearInteraction => {
                vec![vec![(0, 0, 1.0), (1, 1, 1.0)], vec![(2, 0, 1.0), (3, 1, 1.0)]]
            }
            MeanKind::PartialLinear => {
                vec![(0..dt).map(|l| (l, l, 1.0)).collect(), (0..dt).map(|l| (dt, l, 1.0)).collect()]
            }
            MeanKind::TimeSmooth => vec![(0..dt).map(|l| (l, l, 1.0)).collect()],
            MeanKind::BivariateSmooth => {
                let dx = self.dx();
                (0..dx).map(|r| (0..dt).map(|l| (l * dx + r, l, 1.0)).collect()).collect()
            }
        }
    }
}

/// `B(t, x)` for the given structure.
pub fn design_row(ms: &MeanStructure, t: f64, x: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; ms.dim()];
    ms.design_row_into(t, x, &mut out)?;
    Ok(out)
}

/// `P_λ = λ_t P_t ⊗ I + λ_x I ⊗ P_x`, reduced appropriately for the simpler structures.
pub fn tensor_penalty(ms: &MeanStructure, lambda_t: f64, lambda_x: f64) -> Result<PenaltyMatrix> {
    if !(lambda_t >= 0.0 && lambda_x >= 0.0) || !lambda_t.is_finite() || !lambda_x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "smoothing parameters must be finite and non-negative, got ({lambda_t}, {lambda_x})"
        )));
    }
    let dim = ms.dim();
    let mut p = Mat::zeros(dim, dim);
    let (a, b) = ms.penalty_parts()?;
    if let Some(a) = a {
        p.add_assign_scaled(&a, lambda_t);
    }
    if let Some(b) = b {
        p.add_assign_scaled(&b, lambda_x);
    }
    Ok(PenaltyMatrix(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_rank;

    fn bases() -> (UnivariateBasis, UnivariateBasis) {
        (UnivariateBasis::cubic(0.0, 1.0, 7).unwrap(), UnivariateBasis::cubic(-2.0, 3.0, 5).unwrap())
    }

    #[test]
    fn knots_are_clamped() {
        let b = UnivariateBasis::cubic(0.0, 1.0, 7).unwrap();
        assert_eq!(b.knots().len(), 11);
        assert_eq!(&b.knots()[..4], &[0.0; 4]);
        assert_eq!(&b.knots()[7..], &[1.0; 4]);
        assert!(b.knots().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(b.num_basis(), 3 + 3 + 1);
    }

    #[test]
    fn endpoints_and_domain() {
        let b = UnivariateBasis::cubic(0.0, 1.0, 7).unwrap();
        let at_lo = b.eval(0.0).unwrap();
        assert_eq!(at_lo[0], 1.0);
        assert!(at_lo[1..].iter().all(|&v| v == 0.0));
        let at_hi = b.eval(1.0).unwrap();
        assert!((at_hi[6] - 1.0).abs() < 1e-15);
        assert!(matches!(b.eval(1.1), Err(Error::Domain { .. })));
        assert!(matches!(b.eval(-0.01), Err(Error::Domain { .. })));
        assert!(matches!(b.eval(f64::NAN), Err(Error::Domain { .. })));
    }

    #[test]
    fn bad_basis_parameters() {
        assert!(UnivariateBasis::cubic(1.0, 1.0, 7).is_err());
        assert!(UnivariateBasis::cubic(0.0, 1.0, 3).is_err());
        assert!(second_difference_penalty(2).is_err());
    }

    #[test]
    fn penalty_d3_is_single_row_outer_product() {
        let p = second_difference_penalty(3).unwrap();
        let want = [1.0, -2.0, 1.0, -2.0, 4.0, -2.0, 1.0, -2.0, 1.0];
        assert_eq!(p.matrix().as_slice(), &want);
    }

    #[test]
    fn penalty_rank_seven() {
        let p = second_difference_penalty(7).unwrap();
        assert_eq!(symmetric_rank(p.matrix(), 1e-10), 5);
    }

    #[test]
    fn design_rows_simple_structures() {
        assert_eq!(design_row(&MeanStructure::linear(), 0.5, 2.0).unwrap(), vec![1.0, 0.5, 2.0]);
        assert_eq!(design_row(&MeanStructure::linear_interaction(), 1.0, 1.0).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn bivariate_row_sums_to_one_and_is_l_major() {
        let (bt, bx) = bases();
        let ms = MeanStructure::bivariate(bt.clone(), bx.clone());
        let row = design_row(&ms, 0.3, 1.7).unwrap();
        assert_eq!(row.len(), 35);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let vt = bt.eval(0.3).unwrap();
        let vx = bx.eval(1.7).unwrap();
        for l in 0..7 {
            for r in 0..5 {
                assert_eq!(row[l * 5 + r], vt[l] * vx[r]);
            }
        }
        assert!(row.iter().filter(|v| **v != 0.0).count() <= 16);
    }

    #[test]
    fn penalty_shapes_and_errors() {
        let (bt, bx) = bases();
        assert_eq!(tensor_penalty(&MeanStructure::linear(), 1.0, 1.0).unwrap().matrix().max_abs(), 0.0);
        let pl = MeanStructure::partial_linear(bt.clone());
        let p = tensor_penalty(&pl, 2.0, 5.0).unwrap();
        assert_eq!(p.dim(), 8);
        assert!((0..8).all(|i| p.matrix()[(7, i)] == 0.0 && p.matrix()[(i, 7)] == 0.0));
        let bv = MeanStructure::bivariate(bt, bx);
        assert!(matches!(tensor_penalty(&bv, -1.0, 0.0), Err(Error::InvalidParameter(_))));
        assert_eq!(tensor_penalty(&bv, 0.0, 0.0).unwrap().matrix().max_abs(), 0.0);
    }

    #[test]
    fn factorized_rows_match_direct_rows() {
        let (bt, bx) = bases();
        let structures = [
            MeanStructure::linear(),
            MeanStructure::linear_interaction(),
            MeanStructure::partial_linear(bt.clone()),
            MeanStructure::bivariate(bt.clone(), bx),
            MeanStructure::time_smooth(bt),
        ];
        for ms in &structures {
            for &(t, x) in &[(0.0, -2.0), (0.37, 0.4), (1.0, 3.0), (0.81, 2.2)] {
                let direct = design_row(ms, t, x).unwrap();
                let mut a = vec![0.0; ms.time_feature_dim()];
                ms.time_features_into(t, &mut a).unwrap();
                let mut c = vec![0.0; ms.covariate_feature_dim()];
                ms.covariate_features_into(x, &mut c).unwrap();
                let mut row = vec![0.0; ms.dim()];
                for (k, place) in ms.placements().iter().enumerate() {
                    for &(pos, col, w) in place {
                        row[pos] += c[k] * w * a[col];
                    }
                }
                for (u, v) in row.iter().zip(&direct) {
                    assert!((u - v).abs() < 1e-14, "{:?} at ({t},{x})", ms.kind());
                }
                let w = ms.unit_time_functional();
                let unit: f64 = w.iter().zip(&a).map(|(p, q)| p * q).sum();
                assert!((unit - 1.0).abs() < 1e-14);
            }
        }
    }
}
