//! Pointwise intervals and simultaneous bands from a bootstrap ensemble.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::bootstrap::BootstrapEnsemble;
use crate::error::{Error, Result};
use crate::fitcore::FitResult;
use crate::linalg::{psd_factor, Mat};
use crate::rng::stream_rng;
use crate::splinebasis::{MeanKind, MeanStructure};
use crate::stats::{linspace, normal_quantile, quantile_sorted};

/// Linear functionals of the coefficient vector `[β; τ]`, one per
/// evaluation point, stored sparsely.
///
/// Surface grids are ordered with `t` outer and `x` inner: point
/// `g = g_t·G_x + g_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    t_points: Vec<f64>,
    x_points: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl EvalGrid {
    /// `B(t, x)` on an equally spaced `G_t × G_x` grid over the given domains.
    pub fn surface(ms: &MeanStructure, t_domain: (f64, f64), x_domain: (f64, f64), gt: usize, gx: usize) -> Result<Self> {
        if gt == 0 || gx == 0 {
            return Err(Error::InvalidParameter("evaluation grid needs at least one point per axis".into()));
        }
        let t_points = linspace(t_domain.0, t_domain.1, gt);
        let x_points = linspace(x_domain.0, x_domain.1, gx);
        let mut row = vec![0.0; ms.dim()];
        let mut rows = Vec::with_capacity(gt * gx);
        for &t in &t_points {
            for &x in &x_points {
                ms.design_row_into(t, x, &mut row)?;
                rows.push(sparse(&row));
            }
        }
        Ok(Self { t_points, x_points, rows })
    }

    /// The surface grid over a fit's own domains.
    pub fn for_fit(fit: &FitResult, gt: usize, gx: usize) -> Result<Self> {
        Self::surface(&fit.structure, fit.t_domain, fit.x_domain, gt, gx)
    }

    /// The smooth time component `f(t) = B_t(t)ᵀβ_t` of a partially linear or
    /// time-only structure, on `gt` equally spaced points.
    pub fn time_component(ms: &MeanStructure, t_domain: (f64, f64), gt: usize) -> Result<Self> {
        let bt = match ms.kind() {
            MeanKind::PartialLinear | MeanKind::TimeSmooth => ms.t_basis().expect("smooth in t"),
            other => return Err(Error::InvalidParameter(format!("{other:?} has no separate time component"))),
        };
        let t_points = linspace(t_domain.0, t_domain.1, gt);
        let mut row = vec![0.0; bt.num_basis()];
        let mut rows = Vec::with_capacity(gt);
        for &t in &t_points {
            bt.eval_into(t, &mut row)?;
            rows.push(sparse(&row));
        }
        Ok(Self { t_points, x_points: Vec::new(), rows })
    }

    /// A single point picking out coefficient `index`.
    pub fn coefficient(index: usize) -> Self {
        Self { t_points: Vec::new(), x_points: Vec::new(), rows: vec![vec![(index, 1.0)]] }
    }

    /// Arbitrary dense rows.
    pub fn from_rows(t_points: Vec<f64>, x_points: Vec<f64>, rows: &[Vec<f64>]) -> Self {
        Self { t_points, x_points, rows: rows.iter().map(|r| sparse(r)).collect() }
    }

    pub fn t_points(&self) -> &[f64] {
        &self.t_points
    }

    pub fn x_points(&self) -> &[f64] {
        &self.x_points
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Nonzero `(coefficient index, weight)` pairs of point `g`.
    pub fn row(&self, g: usize) -> &[(usize, f64)] {
        &self.rows[g]
    }

    /// Dense `len × width` matrix of all rows.
    pub fn design_block(&self, width: usize) -> Mat {
        let mut m = Mat::zeros(self.rows.len(), width);
        for (g, r) in self.rows.iter().enumerate() {
            for &(k, v) in r {
                m[(g, k)] = v;
            }
        }
        m
    }

    /// Values of the functionals at `coef`.
    pub fn eval(&self, coef: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| apply(r, coef)).collect()
    }

    /// `bᵀVb` at every point.
    pub fn variance(&self, v: &Mat) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                let mut s = 0.0;
                for &(a, va) in r {
                    let row = v.row(a);
                    for &(b, vb) in r {
                        s += va * vb * row[b];
                    }
                }
                s
            })
            .collect()
    }

    fn max_index(&self) -> Option<usize> {
        self.rows.iter().flat_map(|r| r.iter().map(|e| e.0)).max()
    }

    fn check_width(&self, width: usize) -> Result<()> {
        match self.max_index() {
            Some(k) if k >= width => Err(Error::Structural(format!(
                "evaluation grid addresses coefficient {k} of a {width}-dimensional fit"
            ))),
            _ => Ok(()),
        }
    }
}

fn sparse(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, &v)| (k, v)).collect()
}

#[inline]
fn apply(row: &[(usize, f64)], coef: &[f64]) -> f64 {
    row.iter().map(|&(k, v)| v * coef[k]).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BandKind {
    PointwiseNormal,
    PointwiseQuantile,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PointwiseMethod {
    #[default]
    Normal,
    Quantile,
}

/// Where a joint band is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BandCenter {
    /// Mean of the bootstrap replicates.
    #[default]
    Mean,
    /// The fit to the original data.
    Fit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JointOptions {
    /// Number of multivariate normal draws.
    pub draws: usize,
    pub seed: u64,
    /// Scale deviations by `√s` instead of `s`.
    pub legacy_sqrt_s: bool,
    pub center: BandCenter,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self { draws: 1000, seed: 0, legacy_sqrt_s: false, center: BandCenter::Mean }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BandResult {
    pub kind: BandKind,
    pub alpha: f64,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Pointwise bootstrap standard deviation `s = √(bᵀVb)`.
    pub s: Vec<f64>,
    /// The simultaneous multiplier; `None` for pointwise bands and for joint
    /// bands of a zero covariance.
    pub q_hat: Option<f64>,
    /// Grid points left out of the max statistic because `s` vanished there.
    pub excluded_points: usize,
}

impl BandResult {
    pub fn widths(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }

    pub fn mean_width(&self) -> f64 {
        self.widths().iter().sum::<f64>() / self.lower.len() as f64
    }

    /// Whether `truth[g]` lies in `[lower[g], upper[g]]`, allowing for
    /// rounding at the edges.
    pub fn covers(&self, truth: &[f64]) -> Vec<bool> {
        truth
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&m, (&l, &u))| {
                let tol = 1e-10 * (1.0 + m.abs());
                m >= l - tol && m <= u + tol
            })
            .collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Pointwise `100(1 − α)%` intervals around `fit` on `grid`.
///
/// The normal form is `μ̂ ± z_{1−α/2}·√(bᵀVb)`; the quantile form takes the
/// type 7 `α/2` and `1 − α/2` quantiles of the replicate values, with `μ̂`
/// reported as the center.
pub fn pointwise_band(
    fit: &FitResult,
    ens: &BootstrapEnsemble,
    grid: &EvalGrid,
    alpha: f64,
    method: PointwiseMethod,
) -> Result<BandResult> {
    check_alpha(alpha)?;
    if fit.coef.len() != ens.base_coef.len() {
        return Err(Error::Structural("ensemble and fit have different coefficient dimensions".into()));
    }
    grid.check_width(fit.coef.len())?;
    let center = grid.eval(&fit.coef);
    let s: Vec<f64> = grid.variance(&ens.v_coef).into_iter().map(|v| libm::sqrt(v.max(0.0))).collect();
    let (lower, upper, kind) = match method {
        PointwiseMethod::Normal => {
            let z = normal_quantile(1.0 - alpha / 2.0);
            let lower = center.iter().zip(&s).map(|(c, s)| c - z * s).collect();
            let upper = center.iter().zip(&s).map(|(c, s)| c + z * s).collect();
            (lower, upper, BandKind::PointwiseNormal)
        }
        PointwiseMethod::Quantile => {
            let b = ens.replicates();
            if (b as f64) * alpha / 2.0 < 1.0 {
                return Err(Error::InsufficientReplicates { replicates: b, level: alpha / 2.0 });
            }
            let mut vals = vec![0.0; b];
            let mut lower = Vec::with_capacity(grid.len());
            let mut upper = Vec::with_capacity(grid.len());
            for g in 0..grid.len() {
                for (v, c) in vals.iter_mut().zip(&ens.coefs) {
                    *v = apply(grid.row(g), c);
                }
                vals.sort_by(f64::total_cmp);
                lower.push(quantile_sorted(&vals, alpha / 2.0));
                upper.push(quantile_sorted(&vals, 1.0 - alpha / 2.0));
            }
            (lower, upper, BandKind::PointwiseQuantile)
        }
    };
    Ok(BandResult { kind, alpha, center, lower, upper, s, q_hat: None, excluded_points: 0 })
}

/// The simulated max statistics `max_g |b_gᵀu_r| / s_g`, `u_r ~ N(0, V)`,
/// together with `s` and the number of excluded points.
pub fn max_statistics(ens: &BootstrapEnsemble, grid: &EvalGrid, opts: &JointOptions) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    if opts.draws == 0 {
        return Err(Error::InvalidParameter("joint band needs at least one normal draw".into()));
    }
    let v = &ens.v_coef;
    grid.check_width(v.rows())?;
    let s: Vec<f64> = grid.variance(v).into_iter().map(|x| libm::sqrt(x.max(0.0))).collect();
    let s_max = s.iter().cloned().fold(0.0, f64::max);
    let floor = 1e-10 * s_max;
    let scale: Vec<Option<f64>> = s
        .iter()
        .map(|&si| {
            if s_max > 0.0 && si > floor {
                Some(if opts.legacy_sqrt_s { 1.0 / libm::sqrt(si) } else { 1.0 / si })
            } else {
                None
            }
        })
        .collect();
    let excluded = scale.iter().filter(|x| x.is_none()).count();
    if excluded == s.len() {
        return Ok((Vec::new(), s, excluded));
    }
    let factor = psd_factor(v, 1e-10)?;
    let rank = factor.cols();
    let mut rng = stream_rng(opts.seed, 0);
    let mut xi = vec![0.0; rank];
    let mut maxima = Vec::with_capacity(opts.draws);
    for _ in 0..opts.draws {
        for x in xi.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        let u = factor.matvec(&xi);
        let mut m: f64 = 0.0;
        for (g, sc) in scale.iter().enumerate() {
            if let Some(sc) = sc {
                m = m.max(libm::fabs(apply(grid.row(g), &u)) * sc);
            }
        }
        maxima.push(m);
    }
    Ok((maxima, s, excluded))
}

/// Simultaneous `100(1 − α)%` band `center ± q̂·s`, where `q̂` is the
/// empirical `1 − α` quantile of the max standardized deviation of
/// `N(0, V)` draws over the grid.
pub fn joint_band(ens: &BootstrapEnsemble, grid: &EvalGrid, alpha: f64, opts: &JointOptions) -> Result<BandResult> {
    check_alpha(alpha)?;
    let center = match opts.center {
        BandCenter::Mean => grid.eval(&ens.mean_coef()),
        BandCenter::Fit => grid.eval(&ens.base_coef),
    };
    let (mut maxima, s, excluded) = max_statistics(ens, grid, opts)?;
    if maxima.is_empty() {
        return Ok(BandResult {
            kind: BandKind::Joint,
            alpha,
            lower: center.clone(),
            upper: center.clone(),
            center,
            s,
            q_hat: None,
            excluded_points: excluded,
        });
    }
    maxima.sort_by(f64::total_cmp);
    let q = quantile_sorted(&maxima, 1.0 - alpha);
    let half: Vec<f64> = s.iter().map(|&si| if opts.legacy_sqrt_s { q * libm::sqrt(si) } else { q * si }).collect();
    let lower = center.iter().zip(&half).map(|(c, h)| c - h).collect();
    let upper = center.iter().zip(&half).map(|(c, h)| c + h).collect();
    Ok(BandResult { kind: BandKind::Joint, alpha, center, lower, upper, s, q_hat: Some(q), excluded_points: excluded })
}

/// True iff the band lies strictly above or strictly below zero somewhere.
pub fn band_excludes_zero(band: &BandResult) -> bool {
    band.lower.iter().zip(&band.upper).any(|(&l, &u)| l > 0.0 || u < 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::BootstrapKind;
    use crate::splinebasis::UnivariateBasis;

    fn ensemble(coefs: Vec<Vec<f64>>, base: Vec<f64>) -> BootstrapEnsemble {
        let d = base.len();
        let l = vec![(0.0, 0.0); coefs.len()];
        BootstrapEnsemble::new(BootstrapKind::Data, 0, base, d, coefs, l, 0)
    }

    fn linear_fit(coef: Vec<f64>) -> FitResult {
        FitResult {
            structure: MeanStructure::linear(),
            coef,
            lambda: (0.0, 0.0),
            edf: 3.0,
            sse: 0.0,
            gcv: 0.0,
            rows: 10,
            t_domain: (0.0, 1.0),
            x_domain: (0.0, 1.0),
        }
    }

    fn noisy_ensemble() -> BootstrapEnsemble {
        let coefs: Vec<Vec<f64>> = (0..200)
            .map(|b| {
                let u = (b as f64 * 0.618_033_988_7).fract() - 0.5;
                let w = (b as f64 * 0.414_213_562_4).fract() - 0.5;
                vec![1.0 + 0.3 * u, 2.0 + 0.2 * w + 0.1 * u, -1.0 + 0.5 * w]
            })
            .collect();
        ensemble(coefs, vec![1.0, 2.0, -1.0])
    }

    #[test]
    fn zero_covariance_collapses_bands() {
        let base = vec![1.0, 2.0, 3.0];
        let ens = ensemble(vec![base.clone(); 5], base.clone());
        let fit = linear_fit(base);
        let grid = EvalGrid::for_fit(&fit, 5, 4).unwrap();
        let p = pointwise_band(&fit, &ens, &grid, 0.05, PointwiseMethod::Normal).unwrap();
        assert_eq!(p.lower, p.center);
        assert_eq!(p.upper, p.center);
        let j = joint_band(&ens, &grid, 0.05, &JointOptions::default()).unwrap();
        assert_eq!(j.q_hat, None);
        assert_eq!(j.lower, j.center);
        assert_eq!(j.excluded_points, 20);
    }

    #[test]
    fn normal_width_is_two_z_s() {
        let ens = noisy_ensemble();
        let fit = linear_fit(ens.base_coef.clone());
        let grid = EvalGrid::for_fit(&fit, 7, 3).unwrap();
        let b = pointwise_band(&fit, &ens, &grid, 0.05, PointwiseMethod::Normal).unwrap();
        for ((u, l), s) in b.upper.iter().zip(&b.lower).zip(&b.s) {
            assert!((u - l - 2.0 * 1.959_964 * s).abs() < 1e-6);
            assert!(l <= u);
        }
    }

    #[test]
    fn quantile_band_needs_enough_replicates() {
        let base = vec![0.0, 0.0, 0.0];
        let ens = ensemble(vec![vec![0.1, 0.0, 0.0], vec![0.0, 0.2, 0.0]], base.clone());
        let fit = linear_fit(base);
        let grid = EvalGrid::for_fit(&fit, 2, 2).unwrap();
        let r = pointwise_band(&fit, &ens, &grid, 0.05, PointwiseMethod::Quantile);
        assert!(matches!(r, Err(Error::InsufficientReplicates { replicates: 2, .. })));
    }

    #[test]
    fn quantile_band_brackets_replicates() {
        let ens = noisy_ensemble();
        let fit = linear_fit(ens.base_coef.clone());
        let grid = EvalGrid::for_fit(&fit, 4, 4).unwrap();
        let b = pointwise_band(&fit, &ens, &grid, 0.1, PointwiseMethod::Quantile).unwrap();
        for g in 0..grid.len() {
            let vals: Vec<f64> = ens.coefs.iter().map(|c| apply(grid.row(g), c)).collect();
            let inside = vals.iter().filter(|&&v| v >= b.lower[g] && v <= b.upper[g]).count();
            assert!(inside >= 178 && inside <= 182, "{inside}");
        }
    }

    #[test]
    fn joint_multiplier_is_monotone_in_confidence() {
        let ens = noisy_ensemble();
        let grid = EvalGrid::surface(&MeanStructure::linear(), (0.0, 1.0), (0.0, 1.0), 9, 9).unwrap();
        let opts = JointOptions { seed: 11, ..Default::default() };
        let q90 = joint_band(&ens, &grid, 0.10, &opts).unwrap().q_hat.unwrap();
        let q95 = joint_band(&ens, &grid, 0.05, &opts).unwrap().q_hat.unwrap();
        let q99 = joint_band(&ens, &grid, 0.01, &opts).unwrap().q_hat.unwrap();
        assert!(q99 >= q95 && q95 >= q90);
        assert!(q95 >= 1.959_964);
    }

    #[test]
    fn joint_band_covers_pointwise_when_wider() {
        let ens = noisy_ensemble();
        let fit = linear_fit(ens.base_coef.clone());
        let grid = EvalGrid::for_fit(&fit, 6, 6).unwrap();
        let opts = JointOptions { center: BandCenter::Fit, ..Default::default() };
        let j = joint_band(&ens, &grid, 0.05, &opts).unwrap();
        let p = pointwise_band(&fit, &ens, &grid, 0.05, PointwiseMethod::Normal).unwrap();
        if j.q_hat.unwrap() >= normal_quantile(0.975) {
            for g in 0..grid.len() {
                assert!(j.lower[g] <= p.lower[g] + 1e-12 && j.upper[g] >= p.upper[g] - 1e-12);
            }
        }
    }

    #[test]
    fn legacy_scaling_uses_root_s() {
        let ens = noisy_ensemble();
        let grid = EvalGrid::surface(&MeanStructure::linear(), (0.0, 1.0), (0.0, 1.0), 5, 5).unwrap();
        let opts = JointOptions { legacy_sqrt_s: true, ..Default::default() };
        let j = joint_band(&ens, &grid, 0.05, &opts).unwrap();
        let q = j.q_hat.unwrap();
        for g in 0..grid.len() {
            assert!((j.upper[g] - j.center[g] - q * libm::sqrt(j.s[g])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_check() {
        let band = |l: f64, u: f64| BandResult {
            kind: BandKind::Joint,
            alpha: 0.05,
            center: vec![(l + u) / 2.0; 3],
            lower: vec![l; 3],
            upper: vec![u; 3],
            s: vec![0.0; 3],
            q_hat: None,
            excluded_points: 0,
        };
        assert!(band_excludes_zero(&band(0.1, 0.5)));
        assert!(band_excludes_zero(&band(-0.5, -0.1)));
        assert!(!band_excludes_zero(&band(-0.1, 0.1)));
    }

    #[test]
    fn time_component_rows_skip_linear_term() {
        let ms = MeanStructure::partial_linear(UnivariateBasis::cubic(0.0, 1.0, 7).unwrap());
        let grid = EvalGrid::time_component(&ms, (0.0, 1.0), 11).unwrap();
        assert_eq!(grid.len(), 11);
        for g in 0..11 {
            assert!(grid.row(g).iter().all(|&(k, _)| k < 7));
        }
        assert!(EvalGrid::time_component(&MeanStructure::linear(), (0.0, 1.0), 3).is_err());
        let c = EvalGrid::coefficient(2);
        assert_eq!(c.eval(&[1.0, 2.0, 3.0]), vec![3.0]);
    }
}
