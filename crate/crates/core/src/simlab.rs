//! Synthetic data with known truth and Monte Carlo scoring of the estimators,
//! bands and test.
//!
//! Errors follow `ε_ij(t) = Σ_l ξ_ijl φ_l(t) + w_ij(t)` with three Fourier
//! eigenfunctions, scores correlated across the visits of a subject, and
//! white noise `w`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bands::{joint_band, pointwise_band, BandCenter, EvalGrid, JointOptions, PointwiseMethod};
use crate::bootstrap::{BootstrapKind, Bootstrapper, Runner, Sequential};
use crate::error::{Error, Result};
use crate::fitcore::{FunctionalDataset, LambdaGrid, Subject, Visit};
use crate::linalg::{Cholesky, Mat};
use crate::rng::{child_seed, stream_rng};
use crate::splinebasis::{MeanKind, MeanStructure, UnivariateBasis};
use crate::stats::{linspace, mean, sample_variance, trapezoid_weights};
use crate::testkit::{bootstrap_null_test, NullResampling, TestOptions};

/// The true mean surface `μ(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum MeanFunction {
    /// `b0 + bt·t + bx·x`
    Linear { b0: f64, bt: f64, bx: f64 },
    /// `b0 + bt·t + bx·x + btx·t·x`
    Interaction { b0: f64, bt: f64, bx: f64, btx: f64 },
    /// `cos(2πt) + bx·x`
    PartialCos { bx: f64 },
    /// `amplitude·cos(2πt) + delta·(x/4 − t)³`
    CosDeviation { amplitude: f64, delta: f64 },
}

impl MeanFunction {
    /// `5 + 2t + 3x`
    pub fn reference_linear() -> Self {
        Self::Linear { b0: 5.0, bt: 2.0, bx: 3.0 }
    }

    /// `5 + 2t + 3x + 7tx`
    pub fn reference_interaction() -> Self {
        Self::Interaction { b0: 5.0, bt: 2.0, bx: 3.0, btx: 7.0 }
    }

    /// `cos(2πt) + 3x`
    pub fn reference_partial() -> Self {
        Self::PartialCos { bx: 3.0 }
    }

    /// `cos(2πt) + δ(x/4 − t)³`
    pub fn reference_deviation(delta: f64) -> Self {
        Self::CosDeviation { amplitude: 1.0, delta }
    }

    /// `2cos(2πt) + δ(x/4 − t)³`
    pub fn power_family(delta: f64) -> Self {
        Self::CosDeviation { amplitude: 2.0, delta }
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match *self {
            Self::Linear { b0, bt, bx } => b0 + bt * t + bx * x,
            Self::Interaction { b0, bt, bx, btx } => b0 + bt * t + bx * x + btx * t * x,
            Self::PartialCos { bx } => libm::cos(2.0 * PI * t) + bx * x,
            Self::CosDeviation { amplitude, delta } => {
                let d = x / 4.0 - t;
                amplitude * libm::cos(2.0 * PI * t) + delta * d * d * d
            }
        }
    }

    /// Named regression coefficients, in design order, when the mean is a
    /// finite linear combination of them.
    pub fn coefficients(&self) -> Option<Vec<(&'static str, f64)>> {
        match *self {
            Self::Linear { b0, bt, bx } => Some(vec![("beta_0", b0), ("beta_t", bt), ("beta_x", bx)]),
            Self::Interaction { b0, bt, bx, btx } => Some(vec![("beta_0", b0), ("beta_t", bt), ("beta_x", bx), ("beta_tx", btx)]),
            _ => None,
        }
    }

    /// The same family with deviation size `delta`.
    pub fn with_delta(self, delta: f64) -> Result<Self> {
        match self {
            Self::CosDeviation { amplitude, .. } => Ok(Self::CosDeviation { amplitude, delta }),
            other => Err(Error::InvalidParameter(format!("{other:?} has no deviation parameter"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum VisitCount {
    Fixed { m: usize },
    /// Uniform on `{lo, …, hi}`.
    Uniform { lo: usize, hi: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum CovariateLaw {
    /// `X_i ~ Uniform[0, 1]`
    Unit,
    /// `X_i` uniform on the integers `{lo, …, hi}`.
    Integers { lo: i64, hi: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScoreLaw {
    #[default]
    Gaussian,
    /// Unit-variance uniform innovations, correlated the same way.
    Uniform,
}

/// How visit `j` is placed when scores decay with visit distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum VisitTimeScale {
    /// `corr(ξ_ij, ξ_ij') = ρ^|j − j'|`
    Index,
    /// Visits equally spaced on `[0, 1]`: `corr = ρ^(|j − j'|/(m − 1))`.
    #[default]
    UnitInterval,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DgpConfig {
    pub n: usize,
    pub visits: VisitCount,
    pub grid_len: usize,
    pub eigenvalues: [f64; 3],
    pub rho: f64,
    pub sigma2: f64,
    pub mean: MeanFunction,
    /// Effect of one uniform nuisance covariate; `None` omits the covariate.
    pub tau: Option<f64>,
    pub covariate: CovariateLaw,
    pub scores: ScoreLaw,
    pub visit_time: VisitTimeScale,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 100,
            visits: VisitCount::Fixed { m: 5 },
            grid_len: 101,
            eigenvalues: [3.0, 2.0, 1.0 / 3.0],
            rho: 0.2,
            sigma2: 5.33,
            mean: MeanFunction::reference_deviation(0.0),
            tau: None,
            covariate: CovariateLaw::Unit,
            scores: ScoreLaw::Gaussian,
            visit_time: VisitTimeScale::default(),
            seed: 0,
        }
    }
}

impl DgpConfig {
    /// `Σλ_l / σ²`
    pub fn snr(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.sigma2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.grid_len < 2 {
            return bad("grid needs at least two points".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if !(self.sigma2 >= 0.0) || self.eigenvalues.iter().any(|l| !(*l >= 0.0)) {
            return bad("variances must be non-negative".into());
        }
        match self.visits {
            VisitCount::Fixed { m } if m == 0 => return bad("visit count must be positive".into()),
            VisitCount::Uniform { lo, hi } if lo == 0 || lo > hi => return bad("invalid visit count range".into()),
            _ => {}
        }
        if let CovariateLaw::Integers { lo, hi } = self.covariate {
            if lo > hi {
                return bad("invalid covariate range".into());
            }
        }
        Ok(())
    }

    /// Correlation of the scores of visits `j` and `k` out of `m`.
    pub fn visit_correlation(&self, j: usize, k: usize, m: usize) -> f64 {
        if j == k {
            return 1.0;
        }
        let lag = j.abs_diff(k) as f64;
        let lag = match self.visit_time {
            VisitTimeScale::Index => lag,
            VisitTimeScale::UnitInterval => lag / (m - 1) as f64,
        };
        libm::pow(self.rho, lag)
    }
}

/// `φ_1..φ_3` at `t`.
pub fn eigenfunctions(t: f64) -> [f64; 3] {
    [SQRT_2 * libm::cos(2.0 * PI * t), SQRT_2 * libm::sin(2.0 * PI * t), SQRT_2 * libm::cos(4.0 * PI * t)]
}

/// Lower Cholesky factor of the visit-score correlation matrix.
fn correlation_factor(cfg: &DgpConfig, m: usize) -> Result<Mat> {
    let mut r = Mat::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            r[(j, k)] = cfg.visit_correlation(j, k, m);
        }
    }
    Ok(Cholesky::factor(&r)?.lower())
}

/// Correlated scores `ξ_i·l` for one subject: `m` values per eigenfunction.
pub fn sample_scores<R: Rng>(cfg: &DgpConfig, factor: &Mat, rng: &mut R) -> [Vec<f64>; 3] {
    let m = factor.rows();
    let mut out: [Vec<f64>; 3] = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    let mut g = vec![0.0; m];
    for (l, xi) in out.iter_mut().enumerate() {
        for v in g.iter_mut() {
            *v = match cfg.scores {
                ScoreLaw::Gaussian => StandardNormal.sample(rng),
                ScoreLaw::Uniform => rng.random_range(-libm::sqrt(3.0)..libm::sqrt(3.0)),
            };
        }
        let sd = libm::sqrt(cfg.eigenvalues[l]);
        for (j, x) in xi.iter_mut().enumerate() {
            *x = sd * crate::linalg::dot(&factor.row(j)[..=j], &g[..=j]);
        }
    }
    out
}

/// One synthetic dataset. Covariates are drawn per subject and shared by all
/// of its visits.
pub fn generate_dataset(cfg: &DgpConfig) -> Result<FunctionalDataset> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let grid = linspace(0.0, 1.0, cfg.grid_len);
    let phi: Vec<[f64; 3]> = grid.iter().map(|&t| eigenfunctions(t)).collect();
    let sigma = libm::sqrt(cfg.sigma2);
    let mut factors: Vec<Option<Mat>> = Vec::new();
    let mut subjects = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let m = match cfg.visits {
            VisitCount::Fixed { m } => m,
            VisitCount::Uniform { lo, hi } => rng.random_range(lo..=hi),
        };
        let x = match cfg.covariate {
            CovariateLaw::Unit => rng.random::<f64>(),
            CovariateLaw::Integers { lo, hi } => rng.random_range(lo..=hi) as f64,
        };
        let z = cfg.tau.map(|_| rng.random::<f64>());
        if factors.len() <= m {
            factors.resize(m + 1, None);
        }
        if factors[m].is_none() {
            factors[m] = Some(correlation_factor(cfg, m)?);
        }
        let scores = sample_scores(cfg, factors[m].as_ref().expect("factor cached"), &mut rng);
        let shift = match (cfg.tau, z) {
            (Some(tau), Some(z)) => tau * z,
            _ => 0.0,
        };
        let mut visits = Vec::with_capacity(m);
        for j in 0..m {
            let y = grid
                .iter()
                .zip(&phi)
                .map(|(&t, p)| {
                    let w: f64 = StandardNormal.sample(&mut rng);
                    cfg.mean.eval(t, x) + shift + scores[0][j] * p[0] + scores[1][j] * p[1] + scores[2][j] * p[2] + sigma * w
                })
                .collect();
            visits.push(Visit { x, z: z.into_iter().collect(), y });
        }
        subjects.push(Subject { id: format!("{}", i + 1), visits });
    }
    FunctionalDataset::new(grid, subjects)
}

/// Which mean structure to fit in an experiment, with its basis sizes. Bases
/// span the generated data's own `t` and `x` ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum StructureSpec {
    Linear,
    LinearInteraction,
    PartialLinear { d_t: usize },
    Bivariate { d_t: usize, d_x: usize },
}

impl StructureSpec {
    pub fn build(&self, ds: &FunctionalDataset) -> Result<MeanStructure> {
        let (tl, th) = ds.t_range();
        let (xl, xh) = ds.x_range();
        Ok(match *self {
            Self::Linear => MeanStructure::linear(),
            Self::LinearInteraction => MeanStructure::linear_interaction(),
            Self::PartialLinear { d_t } => MeanStructure::partial_linear(UnivariateBasis::cubic(tl, th, d_t)?),
            Self::Bivariate { d_t, d_x } => {
                MeanStructure::bivariate(UnivariateBasis::cubic(tl, th, d_t)?, UnivariateBasis::cubic(xl, xh, d_x)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CoverageSpec {
    pub structure: StructureSpec,
    pub nsim: usize,
    pub replicates: usize,
    pub alphas: Vec<f64>,
    pub kind: BootstrapKind,
    pub pointwise: PointwiseMethod,
    pub joint_draws: usize,
    pub legacy_sqrt_s: bool,
    pub center: BandCenter,
    pub grid_t: usize,
    pub grid_x: usize,
    pub lambda_grid: LambdaGrid,
}

impl Default for CoverageSpec {
    fn default() -> Self {
        Self {
            structure: StructureSpec::Bivariate { d_t: 7, d_x: 7 },
            nsim: 200,
            replicates: 300,
            alphas: vec![0.05],
            kind: BootstrapKind::Residual,
            pointwise: PointwiseMethod::Normal,
            joint_draws: 1000,
            legacy_sqrt_s: false,
            center: BandCenter::Mean,
            grid_t: 101,
            grid_x: 101,
            lambda_grid: LambdaGrid::default(),
        }
    }
}

/// Coverage and length of one band type at one level.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LevelSummary {
    pub alpha: f64,
    pub acp_point: f64,
    pub acp_point_se: f64,
    pub al_point: f64,
    pub al_point_se: f64,
    pub acp_joint: Option<f64>,
    pub acp_joint_se: Option<f64>,
    pub al_joint: Option<f64>,
    pub al_joint_se: Option<f64>,
}

/// Monte Carlo summary for one estimated quantity.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetSummary {
    pub name: String,
    pub rho: f64,
    pub nsim: usize,
    /// `∫ (μ̄ − μ)`, a plain difference for scalar targets.
    pub integrated_bias: f64,
    /// `∫ Σ (μ̂ − μ̄)² / (N_sim − 1)`
    pub integrated_variance: f64,
    pub levels: Vec<LevelSummary>,
}

impl TargetSummary {
    pub fn level(&self, alpha: f64) -> Option<&LevelSummary> {
        self.levels.iter().find(|l| (l.alpha - alpha).abs() < 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RejectionRate {
    pub alpha: f64,
    pub rate: f64,
    /// `√(p(1 − p)/N_sim)`
    pub se: f64,
}

/// Test outcomes for one `(n, ρ, δ)` setting.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RejectionCell {
    pub n: usize,
    pub rho: f64,
    pub delta: f64,
    pub nsim: usize,
    pub p_values: Vec<f64>,
    pub rates: Vec<RejectionRate>,
}

impl RejectionCell {
    pub fn rate(&self, alpha: f64) -> Option<f64> {
        self.rates.iter().find(|r| (r.alpha - alpha).abs() < 1e-12).map(|r| r.rate)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McReport {
    pub nsim: usize,
    pub targets: Vec<TargetSummary>,
    pub cells: Vec<RejectionCell>,
}

impl McReport {
    pub fn target(&self, name: &str) -> Option<&TargetSummary> {
        self.targets.iter().find(|t| t.name == name)
    }

    pub fn cell(&self, n: usize, rho: f64, delta: f64) -> Option<&RejectionCell> {
        self.cells.iter().find(|c| c.n == n && c.rho == rho && c.delta == delta)
    }

    /// Rejection rates by level for the `δ = 0` cell.
    pub fn size_by_alpha(&self, n: usize, rho: f64) -> Option<&[RejectionRate]> {
        self.cell(n, rho, 0.0).map(|c| c.rates.as_slice())
    }

    /// `(δ, rate)` pairs at one level, in the order the cells were run.
    pub fn power_by_delta(&self, n: usize, rho: f64, alpha: f64) -> Vec<(f64, f64)> {
        self.cells.iter().filter(|c| c.n == n && c.rho == rho).filter_map(|c| Some((c.delta, c.rate(alpha)?))).collect()
    }
}

struct Target {
    name: String,
    grid: EvalGrid,
    truth: Vec<f64>,
    weights: Vec<f64>,
    smooth: bool,
}

fn targets(cfg: &DgpConfig, ms: &MeanStructure, t_domain: (f64, f64), x_domain: (f64, f64), spec: &CoverageSpec) -> Result<Vec<Target>> {
    let mut out = Vec::new();
    let scalar = |name: &str, index: usize, truth: f64| Target {
        name: name.into(),
        grid: EvalGrid::coefficient(index),
        truth: vec![truth],
        weights: vec![1.0],
        smooth: false,
    };
    match ms.kind() {
        MeanKind::Linear | MeanKind::LinearInteraction => {
            let coefs = cfg
                .mean
                .coefficients()
                .filter(|c| c.len() == ms.dim())
                .ok_or_else(|| Error::InvalidParameter(format!("true mean {:?} is not of the fitted form {:?}", cfg.mean, ms.kind())))?;
            for (k, (name, v)) in coefs.into_iter().enumerate() {
                out.push(scalar(name, k, v));
            }
        }
        MeanKind::PartialLinear => {
            let MeanFunction::PartialCos { bx } = cfg.mean else {
                return Err(Error::InvalidParameter(format!("true mean {:?} is not partially linear", cfg.mean)));
            };
            let grid = EvalGrid::time_component(ms, t_domain, spec.grid_t)?;
            let truth = grid.t_points().iter().map(|&t| cfg.mean.eval(t, 0.0)).collect();
            let weights = trapezoid_weights(grid.t_points());
            out.push(Target { name: "f_t".into(), grid, truth, weights, smooth: true });
            out.push(scalar("beta_x", ms.dim() - 1, bx));
        }
        MeanKind::BivariateSmooth => {
            let grid = EvalGrid::surface(ms, t_domain, x_domain, spec.grid_t, spec.grid_x)?;
            let (wt, wx) = (trapezoid_weights(grid.t_points()), trapezoid_weights(grid.x_points()));
            let mut truth = Vec::with_capacity(grid.len());
            let mut weights = Vec::with_capacity(grid.len());
            for (&t, a) in grid.t_points().iter().zip(&wt) {
                for (&x, b) in grid.x_points().iter().zip(&wx) {
                    truth.push(cfg.mean.eval(t, x));
                    weights.push(a * b);
                }
            }
            out.push(Target { name: "mu".into(), grid, truth, weights, smooth: true });
        }
        MeanKind::TimeSmooth => return Err(Error::InvalidParameter("coverage of a time-only fit is not scored".into())),
    }
    if let Some(tau) = cfg.tau {
        out.push(scalar("tau", ms.dim(), tau));
    }
    Ok(out)
}

struct LevelRecord {
    point_cov: f64,
    point_len: f64,
    joint: Option<(bool, f64)>,
}

struct SimRecord {
    names: Vec<String>,
    weights: Vec<Vec<f64>>,
    deviations: Vec<Vec<f64>>,
    levels: Vec<Vec<LevelRecord>>,
}

fn coverage_once(cfg: &DgpConfig, spec: &CoverageSpec, sim: usize) -> Result<SimRecord> {
    let seed = child_seed(cfg.seed, sim as u64);
    let data_cfg = DgpConfig { seed, ..cfg.clone() };
    let ds = generate_dataset(&data_cfg)?;
    let ms = spec.structure.build(&ds)?;
    let bs = Bootstrapper::new(&ds, &ms, &spec.lambda_grid, spec.kind)?;
    let ens = bs.run(spec.replicates, child_seed(seed, 1), &Sequential)?;
    let fit = bs.base_fit();
    let targets = targets(cfg, &ms, fit.t_domain, fit.x_domain, spec)?;
    let jopts = JointOptions { draws: spec.joint_draws, seed: child_seed(seed, 2), legacy_sqrt_s: spec.legacy_sqrt_s, center: spec.center };
    let mut rec = SimRecord { names: Vec::new(), weights: Vec::new(), deviations: Vec::new(), levels: Vec::new() };
    for t in targets {
        let est = t.grid.eval(&fit.coef);
        let dev = est.iter().zip(&t.truth).map(|(e, m)| e - m).collect();
        let mut levels = Vec::with_capacity(spec.alphas.len());
        for &alpha in &spec.alphas {
            let p = pointwise_band(fit, &ens, &t.grid, alpha, spec.pointwise)?;
            let cov = p.covers(&t.truth);
            let point_cov = cov.iter().filter(|c| **c).count() as f64 / cov.len() as f64;
            let joint = if t.smooth {
                let j = joint_band(&ens, &t.grid, alpha, &jopts)?;
                Some((j.covers(&t.truth).iter().all(|c| *c), j.mean_width()))
            } else {
                None
            };
            levels.push(LevelRecord { point_cov, point_len: p.mean_width(), joint });
        }
        rec.names.push(t.name);
        rec.weights.push(t.weights);
        rec.deviations.push(dev);
        rec.levels.push(levels);
    }
    Ok(rec)
}

fn proportion_se(p: f64, n: usize) -> f64 {
    libm::sqrt(p * (1.0 - p) / n as f64)
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    (mean(values), libm::sqrt(sample_variance(values) / values.len() as f64))
}

/// Repeats generate → fit → bootstrap → bands `spec.nsim` times and scores
/// the bands against the true mean.
pub fn run_coverage_experiment<R: Runner>(cfg: &DgpConfig, spec: &CoverageSpec, runner: &R) -> Result<McReport> {
    cfg.validate()?;
    if spec.nsim < 2 {
        return Err(Error::InvalidParameter("a coverage experiment needs at least two simulations".into()));
    }
    let records = runner.run(spec.nsim, |s| coverage_once(cfg, spec, s)).into_iter().collect::<Result<Vec<_>>>()?;
    let first = &records[0];
    let nsim = records.len();
    let mut targets = Vec::with_capacity(first.names.len());
    for (k, name) in first.names.iter().enumerate() {
        let points = first.deviations[k].len();
        let mut bias = 0.0;
        let mut var = 0.0;
        let mut column = vec![0.0; nsim];
        for g in 0..points {
            for (c, r) in column.iter_mut().zip(&records) {
                *c = r.deviations[k][g];
            }
            let w = first.weights[k][g];
            bias += w * mean(&column);
            var += w * sample_variance(&column);
        }
        let mut levels = Vec::with_capacity(spec.alphas.len());
        for (a, &alpha) in spec.alphas.iter().enumerate() {
            let cov: Vec<f64> = records.iter().map(|r| r.levels[k][a].point_cov).collect();
            let len: Vec<f64> = records.iter().map(|r| r.levels[k][a].point_len).collect();
            let (acp_point, acp_point_se) = mean_se(&cov);
            let (al_point, al_point_se) = mean_se(&len);
            let (mut acp_joint, mut acp_joint_se, mut al_joint, mut al_joint_se) = (None, None, None, None);
            if first.levels[k][a].joint.is_some() {
                let joint: Vec<(bool, f64)> = records.iter().map(|r| r.levels[k][a].joint.expect("joint recorded")).collect();
                let p = joint.iter().filter(|j| j.0).count() as f64 / nsim as f64;
                let widths: Vec<f64> = joint.iter().map(|j| j.1).collect();
                let (w, wse) = mean_se(&widths);
                acp_joint = Some(p);
                acp_joint_se = Some(proportion_se(p, nsim));
                al_joint = Some(w);
                al_joint_se = Some(wse);
            }
            levels.push(LevelSummary { alpha, acp_point, acp_point_se, al_point, al_point_se, acp_joint, acp_joint_se, al_joint, al_joint_se });
        }
        targets.push(TargetSummary { name: name.clone(), rho: cfg.rho, nsim, integrated_bias: bias, integrated_variance: var, levels });
    }
    Ok(McReport { nsim, targets, cells: Vec::new() })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SizePowerSpec {
    pub ns: Vec<usize>,
    pub rhos: Vec<f64>,
    pub deltas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub nsim: usize,
    pub structure: StructureSpec,
    /// Test settings; the seed is replaced by one derived per simulation.
    /// Defaults to residual-block resampling, since the generated covariates
    /// are visit-invariant.
    pub test: TestOptions,
    pub lambda_grid: LambdaGrid,
}

impl Default for SizePowerSpec {
    fn default() -> Self {
        Self {
            ns: vec![100],
            rhos: vec![0.2],
            deltas: vec![0.0],
            alphas: vec![0.05, 0.10, 0.15],
            nsim: 200,
            structure: StructureSpec::Bivariate { d_t: 7, d_x: 7 },
            test: TestOptions { resampling: NullResampling::Residual, ..TestOptions::default() },
            lambda_grid: LambdaGrid::default(),
        }
    }
}

/// p-values of `spec.nsim` tests on data generated from `cfg`.
pub fn null_test_p_values<R: Runner>(cfg: &DgpConfig, spec: &SizePowerSpec, runner: &R) -> Result<Vec<f64>> {
    cfg.validate()?;
    runner
        .run(spec.nsim, |s| {
            let seed = child_seed(cfg.seed, s as u64);
            let ds = generate_dataset(&DgpConfig { seed, ..cfg.clone() })?;
            let ms = spec.structure.build(&ds)?;
            let opts = TestOptions { seed: child_seed(seed, 3), ..spec.test };
            Ok(bootstrap_null_test(&ds, &ms, &spec.lambda_grid, &opts, &Sequential)?.p_value)
        })
        .into_iter()
        .collect()
}

/// Rejection rates over every `(n, ρ, δ)` combination, `δ` varying fastest.
/// Simulation `s` uses the same seed in every cell.
pub fn run_size_power_experiment<R: Runner>(base: &DgpConfig, spec: &SizePowerSpec, runner: &R) -> Result<McReport> {
    if spec.nsim == 0 {
        return Err(Error::InvalidParameter("nsim must be positive".into()));
    }
    let mut cells = Vec::new();
    for &n in &spec.ns {
        for &rho in &spec.rhos {
            for &delta in &spec.deltas {
                let cfg = DgpConfig { n, rho, mean: base.mean.with_delta(delta)?, ..base.clone() };
                let p_values = null_test_p_values(&cfg, spec, runner)?;
                let rates = spec
                    .alphas
                    .iter()
                    .map(|&alpha| {
                        let rate = p_values.iter().filter(|&&p| p <= alpha).count() as f64 / p_values.len() as f64;
                        RejectionRate { alpha, rate, se: proportion_se(rate, p_values.len()) }
                    })
                    .collect();
                cells.push(RejectionCell { n, rho, delta, nsim: spec.nsim, p_values, rates });
            }
        }
    }
    Ok(McReport { nsim: spec.nsim, targets: Vec::new(), cells })
}
