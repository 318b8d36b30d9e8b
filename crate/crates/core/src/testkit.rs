//! The L² test of whether the mean depends on `x` at all.
//!
//! `T = ∫∫ {μ̂_A(t, x) − μ̂_0(t)}² dt dx` compares a fit of the alternative
//! structure with a penalized time-only fit. Its null distribution is
//! approximated by refitting both models on data synthesized from the null
//! fit plus resampled residuals of the alternative fit.

use alloc::vec::Vec;

use crate::bootstrap::{run_replicates, DataResampler, ResidualPool, ResidualResampler, ResidualStore, Runner};
use crate::error::{Error, Result};
use crate::fitcore::{check_structure, FitEngine, FitResult, FunctionalDataset, LambdaGrid, Subject, Visit};
use crate::linalg::dot;
use crate::splinebasis::{MeanStructure, UnivariateBasis};
use crate::stats::{linspace, trapezoid_weights};

/// Tensor trapezoid rule on an equally spaced `G_t × G_x` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    t: Vec<f64>,
    x: Vec<f64>,
    wt: Vec<f64>,
    wx: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(t_domain: (f64, f64), x_domain: (f64, f64), gt: usize, gx: usize) -> Result<Self> {
        if gt < 2 || gx < 2 {
            return Err(Error::InvalidParameter("quadrature needs at least two points per axis".into()));
        }
        let t = linspace(t_domain.0, t_domain.1, gt);
        let x = linspace(x_domain.0, x_domain.1, gx);
        let (wt, wx) = (trapezoid_weights(&t), trapezoid_weights(&x));
        Ok(Self { t, x, wt, wx })
    }

    pub fn t_points(&self) -> &[f64] {
        &self.t
    }

    pub fn x_points(&self) -> &[f64] {
        &self.x
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.t.len(), self.x.len())
    }

    pub fn integrate<F: Fn(f64, f64) -> Result<f64>>(&self, f: F) -> Result<f64> {
        let mut total = 0.0;
        for (&t, &wt) in self.t.iter().zip(&self.wt) {
            let mut inner = 0.0;
            for (&x, &wx) in self.x.iter().zip(&self.wx) {
                inner += wx * f(t, x)?;
            }
            total += wt * inner;
        }
        Ok(total)
    }
}

/// `∫∫ {μ_A(t, x) − μ_0(t)}² dt dx` by the tensor trapezoid rule.
pub fn test_statistic<A, N>(mu_a: A, mu_0: N, grid: &QuadratureGrid) -> Result<f64>
where
    A: Fn(f64, f64) -> Result<f64>,
    N: Fn(f64) -> Result<f64>,
{
    grid.integrate(|t, x| {
        let d = mu_a(t, x)? - mu_0(t)?;
        Ok(d * d)
    })
}

/// The statistic for two fitted models.
pub fn fit_statistic(alt: &FitResult, null: &FitResult, grid: &QuadratureGrid) -> Result<f64> {
    test_statistic(|t, x| alt.mean_eval(t, x), |t| null.mean_eval(t, 0.0), grid)
}

/// Precomputed basis rows on a quadrature grid, so that the statistic of a
/// pair of coefficient vectors costs one sparse pass.
struct StatisticForm {
    alt_rows: Vec<Vec<(usize, f64)>>,
    null_rows: Vec<Vec<(usize, f64)>>,
    wt: Vec<f64>,
    wx: Vec<f64>,
}

impl StatisticForm {
    fn new(alt: &MeanStructure, null: &MeanStructure, grid: &QuadratureGrid) -> Result<Self> {
        let mut row = alloc::vec![0.0; alt.dim()];
        let mut alt_rows = Vec::with_capacity(grid.t.len() * grid.x.len());
        let mut null_rows = Vec::with_capacity(grid.t.len());
        let mut nrow = alloc::vec![0.0; null.dim()];
        for &t in &grid.t {
            null.design_row_into(t, 0.0, &mut nrow)?;
            null_rows.push(sparse(&nrow));
            for &x in &grid.x {
                alt.design_row_into(t, x, &mut row)?;
                alt_rows.push(sparse(&row));
            }
        }
        Ok(Self { alt_rows, null_rows, wt: grid.wt.clone(), wx: grid.wx.clone() })
    }

    fn eval(&self, beta_alt: &[f64], beta_null: &[f64]) -> f64 {
        let gx = self.wx.len();
        let mut total = 0.0;
        for (it, wt) in self.wt.iter().enumerate() {
            let m0: f64 = self.null_rows[it].iter().map(|&(k, v)| v * beta_null[k]).sum();
            let mut inner = 0.0;
            for (ix, wx) in self.wx.iter().enumerate() {
                let ma: f64 = self.alt_rows[it * gx + ix].iter().map(|&(k, v)| v * beta_alt[k]).sum();
                inner += wx * (ma - m0) * (ma - m0);
            }
            total += wt * inner;
        }
        total
    }
}

fn sparse(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, &v)| (k, v)).collect()
}

/// Time-only structure with `d_t` cubic B-splines over the dataset's grid range.
pub fn null_structure(ds: &FunctionalDataset, d_t: usize) -> Result<MeanStructure> {
    let (lo, hi) = ds.t_range();
    Ok(MeanStructure::time_smooth(UnivariateBasis::cubic(lo, hi, d_t)?))
}

/// Penalized fit of `μ(t) = B(t)ᵀβ` plus the linear nuisance effects.
pub fn fit_null(ds: &FunctionalDataset, d_t: usize, grid: &LambdaGrid) -> Result<FitResult> {
    crate::fitcore::fit(ds, &null_structure(ds, d_t)?, grid)
}

/// How replicate datasets are formed from the null-synthesized data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NullResampling {
    /// Resample subjects, each carrying its residual block and its covariates.
    #[default]
    Literal,
    /// Keep every subject's covariates and attach a resampled residual block;
    /// needs visit-invariant covariates.
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TestOptions {
    pub replicates: usize,
    pub seed: u64,
    pub resampling: NullResampling,
    /// Basis size of the time-only null fit.
    pub null_d_t: usize,
    pub grid_t: usize,
    pub grid_x: usize,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self { replicates: 300, seed: 0, resampling: NullResampling::Literal, null_d_t: 7, grid_t: 101, grid_x: 101 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TestOutcome {
    pub t_obs: f64,
    pub null_draws: Vec<f64>,
    pub p_value: f64,
    pub replicates: usize,
    pub integration_grid: (usize, usize),
    pub failures: usize,
    pub seed: u64,
    pub alt_fit: FitResult,
    pub null_fit: FitResult,
}

impl TestOutcome {
    /// Whether the test rejects at level `alpha` (`p ≤ α`).
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// Share of `draws` that are at least `t_obs`. Away from exact ties this is
/// the strict exceedance rate; an exact tie counts in favor of the null.
pub fn p_value(t_obs: f64, draws: &[f64]) -> f64 {
    draws.iter().filter(|&&d| d > t_obs || d == t_obs).count() as f64 / draws.len() as f64
}

/// Bootstrap test of `H₀: μ(t, x) = η(t)` against the structure `ms_alt`.
pub fn bootstrap_null_test<R: Runner>(
    ds: &FunctionalDataset,
    ms_alt: &MeanStructure,
    grid: &LambdaGrid,
    opts: &TestOptions,
    runner: &R,
) -> Result<TestOutcome> {
    check_structure(ds, ms_alt)?;
    let ms_null = null_structure(ds, opts.null_d_t)?;
    let alt_engine = FitEngine::new(ds, ms_alt, grid)?;
    let null_engine = FitEngine::new(ds, &ms_null, grid)?;
    let alt = DataResampler::new(alt_engine.clone(), ds)?.fit_all()?;
    let null = DataResampler::new(null_engine.clone(), ds)?.fit_all()?;
    let quad = QuadratureGrid::new(ds.t_range(), ds.x_range(), opts.grid_t, opts.grid_x)?;
    let form = StatisticForm::new(ms_alt, &ms_null, &quad)?;
    let t_obs = form.eval(alt.beta(), null.beta());

    let store = ResidualStore::from_fit(ds, &alt)?;
    let null_curve: Vec<f64> = ds.grid().iter().map(|&t| null.mean_eval(t, 0.0)).collect::<Result<_>>()?;
    let center = |z: &[f64]| -> Vec<f64> {
        let zt = dot(z, alt.tau());
        null_curve.iter().map(|m| m + zt).collect()
    };
    let n = ds.n();
    let stat = |pair: Result<(FitResult, FitResult)>| pair.map(|(a, o)| form.eval(a.beta(), o.beta()));
    let (null_draws, failures) = match opts.resampling {
        NullResampling::Literal => {
            let subjects = ds
                .subjects()
                .iter()
                .zip(store.blocks())
                .map(|(s, block)| Subject {
                    id: s.id.clone(),
                    visits: s
                        .visits
                        .iter()
                        .zip(block)
                        .map(|(v, e)| Visit { x: v.x, z: v.z.clone(), y: center(&v.z).iter().zip(e).map(|(c, e)| c + e).collect() })
                        .collect(),
                })
                .collect();
            let synth = FunctionalDataset::new(ds.grid().to_vec(), subjects)?;
            let ra = DataResampler::new(alt_engine, &synth)?;
            let r0 = DataResampler::new(null_engine, &synth)?;
            run_replicates(runner, n, opts.replicates, opts.seed, |d| stat(ra.fit_draws(d).and_then(|a| Ok((a, r0.fit_draws(d)?)))))?
        }
        NullResampling::Residual => {
            let centers = ds.subjects().iter().map(|s| center(&s.visits[0].z)).collect();
            let pool = ResidualPool::new(centers, &store);
            let ra = ResidualResampler::new(alt_engine, ds, &pool)?;
            let r0 = ResidualResampler::new(null_engine, ds, &pool)?;
            run_replicates(runner, n, opts.replicates, opts.seed, |d| {
                stat(ra.fit_draws(&pool, d).and_then(|a| Ok((a, r0.fit_draws(&pool, d)?))))
            })?
        }
    };
    Ok(TestOutcome {
        t_obs,
        p_value: p_value(t_obs, &null_draws),
        null_draws,
        replicates: opts.replicates,
        integration_grid: quad.shape(),
        failures,
        seed: opts.seed,
        alt_fit: alt,
        null_fit: null,
    })
}
