//! Resampling whole subjects: the data bootstrap and the residual bootstrap.
//!
//! Replicate `b` draws its subject indices from random stream `b` of the
//! seed, so an ensemble does not depend on how replicates are scheduled. A
//! replicate whose refit fails is redrawn from the same stream; if more than
//! 5% of the requested replicates needed a redraw the run is abandoned.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fitcore::{accumulate_outer, FitEngine, FitResult, FunctionalDataset, GcvSolver, LambdaGrid, SubjectStats};
use crate::linalg::{dot, Mat};
use crate::rng::{counts, resample_indices, stream_rng};
use crate::splinebasis::MeanStructure;

/// Executes `count` independent tasks and returns their results in index order.
pub trait Runner: Sync {
    fn run<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

/// Runs tasks one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Runner for Sequential {
    fn run<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..count).map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BootstrapKind {
    /// Resample subjects together with their responses and covariates.
    Data,
    /// Keep every subject's covariates and fitted mean, resample residual blocks.
    #[default]
    Residual,
}

/// Replicate coefficient vectors and their sample covariance.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapEnsemble {
    pub kind: BootstrapKind,
    pub seed: u64,
    /// `[β̂; τ̂]` of the fit to the original data.
    pub base_coef: Vec<f64>,
    pub beta_dim: usize,
    /// One `[β̂^(b); τ̂^(b)]` per replicate.
    pub coefs: Vec<Vec<f64>>,
    pub lambdas: Vec<(f64, f64)>,
    /// Sample covariance of `coefs`, divisor `B − 1`.
    pub v_coef: Mat,
    /// Replicates that had to be redrawn.
    pub failures: usize,
}

impl BootstrapEnsemble {
    pub fn new(
        kind: BootstrapKind,
        seed: u64,
        base_coef: Vec<f64>,
        beta_dim: usize,
        coefs: Vec<Vec<f64>>,
        lambdas: Vec<(f64, f64)>,
        failures: usize,
    ) -> Self {
        let v_coef = sample_covariance(&coefs, base_coef.len());
        Self { kind, seed, base_coef, beta_dim, coefs, lambdas, v_coef, failures }
    }

    pub fn replicates(&self) -> usize {
        self.coefs.len()
    }

    pub fn betas(&self) -> impl Iterator<Item = &[f64]> {
        self.coefs.iter().map(move |c| &c[..self.beta_dim])
    }

    /// `V_β̂`, the block of `v_coef` belonging to the mean coefficients.
    pub fn v_beta(&self) -> Mat {
        self.v_coef.leading_block(self.beta_dim)
    }

    pub fn mean_coef(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.base_coef.len()];
        for c in &self.coefs {
            for (a, b) in m.iter_mut().zip(c) {
                *a += b;
            }
        }
        let b = self.coefs.len() as f64;
        m.iter_mut().for_each(|v| *v /= b);
        m
    }
}

/// Sample covariance with divisor `B − 1`; the zero matrix when `B < 2`.
pub fn sample_covariance(rows: &[Vec<f64>], dim: usize) -> Mat {
    let mut v = Mat::zeros(dim, dim);
    let b = rows.len();
    if b < 2 {
        return v;
    }
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut dev = vec![0.0; dim];
    for r in rows {
        for k in 0..dim {
            dev[k] = r[k] - mean[k];
        }
        accumulate_outer(v.as_mut_slice(), &dev, &dev, 1.0);
    }
    let scale = 1.0 / (b - 1) as f64;
    v.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
    v
}

/// Residual curves `e_ij(t_ℓ)` of a fit, grouped by subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStore {
    blocks: Vec<Vec<Vec<f64>>>,
}

impl ResidualStore {
    pub fn from_fit(ds: &FunctionalDataset, fit: &FitResult) -> Result<Self> {
        let mut blocks = Vec::with_capacity(ds.n());
        for s in ds.subjects() {
            let mut block = Vec::with_capacity(s.visits.len());
            for v in &s.visits {
                let zt = dot(&v.z, fit.tau());
                let mut e = Vec::with_capacity(v.y.len());
                for (&t, &y) in ds.grid().iter().zip(&v.y) {
                    e.push(y - fit.mean_eval(t, v.x)? - zt);
                }
                block.push(e);
            }
            blocks.push(block);
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Vec<Vec<f64>>] {
        &self.blocks
    }

    /// Visit-wise residual curves of subject `i`.
    pub fn block(&self, i: usize) -> &[Vec<f64>] {
        &self.blocks[i]
    }
}

/// Refits a dataset reweighted by subject multiplicities.
pub(crate) struct DataResampler {
    engine: FitEngine,
    stats: Vec<SubjectStats>,
}

impl DataResampler {
    pub(crate) fn new(engine: FitEngine, ds: &FunctionalDataset) -> Result<Self> {
        let stats = ds.subjects().iter().map(|s| engine.subject_stats(s)).collect::<Result<Vec<_>>>()?;
        Ok(Self { engine, stats })
    }

    pub(crate) fn fit_all(&self) -> Result<FitResult> {
        self.fit_counts(&vec![1; self.stats.len()])
    }

    pub(crate) fn fit_counts(&self, counts: &[usize]) -> Result<FitResult> {
        let mut sum = self.engine.empty_sum();
        for (s, &c) in self.stats.iter().zip(counts) {
            sum.add_weighted(s, c);
        }
        self.engine.fit_sum(&sum)
    }

    pub(crate) fn fit_draws(&self, draws: &[usize]) -> Result<FitResult> {
        self.fit_counts(&counts(draws, self.stats.len()))
    }
}

/// Subject-level pieces of a residual bootstrap that do not depend on the
/// fitted model: the curve each subject is centered at and its residuals.
pub(crate) struct ResidualPool {
    pub(crate) centers: Vec<Vec<f64>>,
    pub(crate) visits: Vec<usize>,
    /// `Σ_j e_kj`
    pub(crate) resid_sum: Vec<Vec<f64>>,
    /// `Σ_j ‖e_kj‖²`
    pub(crate) resid_sq: Vec<f64>,
}

impl ResidualPool {
    pub(crate) fn new(centers: Vec<Vec<f64>>, store: &ResidualStore) -> Self {
        let mut resid_sum = Vec::with_capacity(store.blocks.len());
        let mut resid_sq = Vec::with_capacity(store.blocks.len());
        for block in &store.blocks {
            let mut sum = vec![0.0; block[0].len()];
            let mut sq = 0.0;
            for e in block {
                for (s, v) in sum.iter_mut().zip(e) {
                    *s += v;
                }
                sq += dot(e, e);
            }
            resid_sum.push(sum);
            resid_sq.push(sq);
        }
        let visits = store.blocks.iter().map(|b| b.len()).collect();
        Self { centers, visits, resid_sum, resid_sq }
    }
}

/// Refits `Y*_i = center_i + e*_{k_i}` for a draw `k`, using only per-subject
/// projections. Requires visit-invariant covariates.
pub(crate) struct ResidualResampler {
    engine: FitEngine,
    base_solver: GcvSolver,
    base_visits: Vec<usize>,
    cov: Vec<Vec<f64>>,
    center_proj: Vec<Vec<f64>>,
    center_sq: Vec<f64>,
    resid_proj: Vec<Vec<f64>>,
}

impl ResidualResampler {
    pub(crate) fn new(engine: FitEngine, ds: &FunctionalDataset, pool: &ResidualPool) -> Result<Self> {
        if !ds.covariates_visit_invariant() {
            return Err(Error::Precondition(
                "residual resampling needs covariates that are constant across visits; use the data bootstrap".into(),
            ));
        }
        let s = engine.stats_dim();
        let q = engine.time_feature_dim();
        let mut cov = Vec::with_capacity(ds.n());
        let mut cross = vec![0.0; s * s];
        for (subj, &m) in ds.subjects().iter().zip(&pool.visits) {
            let v = &subj.visits[0];
            let mut c = vec![0.0; s];
            engine.covariate_vector(v.x, &v.z, &mut c)?;
            accumulate_outer(&mut cross, &c, &c, m as f64);
            cov.push(c);
        }
        let project = |curve: &Vec<f64>| {
            let mut out = vec![0.0; q];
            engine.project_curve(curve, &mut out);
            out
        };
        let center_proj = pool.centers.iter().map(project).collect();
        let resid_proj = pool.resid_sum.iter().map(project).collect();
        let center_sq = pool.centers.iter().map(|c| dot(c, c)).collect();
        let base_solver = engine.solver(engine.gram(&cross))?;
        Ok(Self { engine, base_solver, base_visits: pool.visits.clone(), cov, center_proj, center_sq, resid_proj })
    }

    pub(crate) fn fit_draws(&self, pool: &ResidualPool, draws: &[usize]) -> Result<FitResult> {
        let s = self.engine.stats_dim();
        let q = self.engine.time_feature_dim();
        let mut proj = vec![0.0; q * s];
        let mut yy = 0.0;
        let mut visits = 0;
        let mut same_design = true;
        let mut a = vec![0.0; q];
        for (i, &k) in draws.iter().enumerate() {
            let m = pool.visits[k];
            same_design &= m == self.base_visits[i];
            visits += m;
            let mf = m as f64;
            for ((a, cp), rp) in a.iter_mut().zip(&self.center_proj[i]).zip(&self.resid_proj[k]) {
                *a = mf * cp + rp;
            }
            accumulate_outer(&mut proj, &a, &self.cov[i], 1.0);
            yy += mf * self.center_sq[i] + 2.0 * dot(&pool.centers[i], &pool.resid_sum[k]) + pool.resid_sq[k];
        }
        let rows = visits * self.engine.time_basis().rows();
        let rhs = self.engine.rhs(&proj);
        if same_design {
            return self.engine.fit_with(&self.base_solver, &rhs, yy, rows);
        }
        let mut cross = vec![0.0; s * s];
        for (i, &k) in draws.iter().enumerate() {
            accumulate_outer(&mut cross, &self.cov[i], &self.cov[i], pool.visits[k] as f64);
        }
        let solver = self.engine.solver(self.engine.gram(&cross))?;
        self.engine.fit_with(&solver, &rhs, yy, rows)
    }
}

enum Method {
    Data(DataResampler),
    Residual(ResidualResampler, ResidualPool),
}

/// A fitted model ready to be bootstrapped.
pub struct Bootstrapper {
    kind: BootstrapKind,
    base: FitResult,
    n: usize,
    method: Method,
}

impl Bootstrapper {
    pub fn new(ds: &FunctionalDataset, ms: &MeanStructure, grid: &LambdaGrid, kind: BootstrapKind) -> Result<Self> {
        crate::fitcore::check_structure(ds, ms)?;
        let engine = FitEngine::new(ds, ms, grid)?;
        let data = DataResampler::new(engine.clone(), ds)?;
        let base = data.fit_all()?;
        let method = match kind {
            BootstrapKind::Data => Method::Data(data),
            BootstrapKind::Residual => {
                let store = ResidualStore::from_fit(ds, &base)?;
                let centers = ds
                    .subjects()
                    .iter()
                    .map(|s| {
                        let v = &s.visits[0];
                        ds.grid().iter().map(|&t| base.fitted(t, v.x, &v.z)).collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let pool = ResidualPool::new(centers, &store);
                Method::Residual(ResidualResampler::new(engine, ds, &pool)?, pool)
            }
        };
        Ok(Self { kind, base, n: ds.n(), method })
    }

    pub fn base_fit(&self) -> &FitResult {
        &self.base
    }

    pub fn kind(&self) -> BootstrapKind {
        self.kind
    }

    /// Refit for one vector of resampled subject indices.
    pub fn fit_draws(&self, draws: &[usize]) -> Result<FitResult> {
        if draws.len() != self.n || draws.iter().any(|&k| k >= self.n) {
            return Err(Error::InvalidParameter(format!("resample must hold {} indices below {}", self.n, self.n)));
        }
        match &self.method {
            Method::Data(d) => d.fit_draws(draws),
            Method::Residual(r, pool) => r.fit_draws(pool, draws),
        }
    }

    /// `replicates` seeded replicates.
    pub fn run<R: Runner>(&self, replicates: usize, seed: u64, runner: &R) -> Result<BootstrapEnsemble> {
        let (fits, failures) = run_replicates(runner, self.n, replicates, seed, |d| self.fit_draws(d))?;
        Ok(self.ensemble(seed, fits, failures))
    }

    /// Replicates from caller-supplied index vectors; a failing refit is an error.
    pub fn run_with_draws(&self, draws: &[Vec<usize>], seed: u64) -> Result<BootstrapEnsemble> {
        if draws.is_empty() {
            return Err(Error::InvalidParameter("at least one replicate is required".into()));
        }
        let fits = draws.iter().map(|d| self.fit_draws(d)).collect::<Result<Vec<_>>>()?;
        Ok(self.ensemble(seed, fits, 0))
    }

    fn ensemble(&self, seed: u64, fits: Vec<FitResult>, failures: usize) -> BootstrapEnsemble {
        let lambdas = fits.iter().map(|f| f.lambda).collect();
        let coefs = fits.into_iter().map(|f| f.coef).collect();
        BootstrapEnsemble::new(self.kind, seed, self.base.coef.clone(), self.base.beta_dim(), coefs, lambdas, failures)
    }
}

/// Runs `replicates` seeded tasks, redrawing failed ones from the same stream.
/// Returns the results and the number of redraws.
pub(crate) fn run_replicates<T, R, F>(runner: &R, n: usize, replicates: usize, seed: u64, task: F) -> Result<(Vec<T>, usize)>
where
    T: Send,
    R: Runner,
    F: Fn(&[usize]) -> Result<T> + Sync,
{
    if replicates == 0 {
        return Err(Error::InvalidParameter("at least one replicate is required".into()));
    }
    let allowed = replicates / 20;
    let outcomes = runner.run(replicates, |b| {
        let mut rng = stream_rng(seed, b as u64);
        let mut failed = 0;
        loop {
            let draws = resample_indices(&mut rng, n);
            match task(&draws) {
                Ok(v) => return (Ok(v), failed),
                Err(e) => {
                    failed += 1;
                    if failed > allowed {
                        return (Err(e), failed);
                    }
                }
            }
        }
    });
    let failed: usize = outcomes.iter().map(|o| o.1).sum();
    let mut out = Vec::with_capacity(replicates);
    let mut last = None;
    for (r, _) in outcomes {
        match r {
            Ok(v) => out.push(v),
            Err(e) => last = Some(e),
        }
    }
    if failed > allowed || last.is_some() {
        return Err(Error::TooManyFailures {
            failed,
            requested: replicates,
            allowed,
            last: last.map_or_else(|| "none".into(), |e| e.to_string()),
        });
    }
    Ok((out, failed))
}

/// Data bootstrap: resample subjects with their responses and covariates and
/// refit with GCV reselection in every replicate.
pub fn bootstrap_data<R: Runner>(
    ds: &FunctionalDataset,
    ms: &MeanStructure,
    grid: &LambdaGrid,
    replicates: usize,
    seed: u64,
    runner: &R,
) -> Result<BootstrapEnsemble> {
    Bootstrapper::new(ds, ms, grid, BootstrapKind::Data)?.run(replicates, seed, runner)
}

/// Residual bootstrap: subject `i` keeps its covariates and fitted mean and
/// receives the whole residual block of a resampled subject `k`, including
/// `k`'s visit count.
pub fn bootstrap_residuals<R: Runner>(
    ds: &FunctionalDataset,
    ms: &MeanStructure,
    grid: &LambdaGrid,
    replicates: usize,
    seed: u64,
    runner: &R,
) -> Result<BootstrapEnsemble> {
    Bootstrapper::new(ds, ms, grid, BootstrapKind::Residual)?.run(replicates, seed, runner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitcore::{fit, Subject, Visit};
    use crate::splinebasis::UnivariateBasis;

    fn dataset(n: usize, noise: f64, visits: impl Fn(usize) -> usize) -> FunctionalDataset {
        let grid: Vec<f64> = (0..15).map(|k| k as f64 / 14.0).collect();
        let subjects = (0..n)
            .map(|i| {
                let x = (i % 7) as f64 / 6.0;
                let z = vec![((i * 3) % 5) as f64 / 4.0];
                Subject {
                    id: format!("s{i}"),
                    visits: (0..visits(i))
                        .map(|j| Visit {
                            x,
                            z: z.clone(),
                            y: grid
                                .iter()
                                .enumerate()
                                .map(|(l, &t)| {
                                    1.0 + libm::sin(3.0 * t) + 2.0 * x + 0.5 * z[0]
                                        + noise * ((((i * 37 + j * 11 + l * 7) % 19) as f64) - 9.0) / 9.0
                                })
                                .collect(),
                        })
                        .collect(),
                }
            })
            .collect();
        FunctionalDataset::new(grid, subjects).unwrap()
    }

    fn structure() -> MeanStructure {
        MeanStructure::partial_linear(UnivariateBasis::cubic(0.0, 1.0, 6).unwrap())
    }

    #[test]
    fn identity_resample_reproduces_base_fit() {
        let ds = dataset(8, 0.3, |i| 1 + i % 3);
        let ms = structure();
        let grid = LambdaGrid::default();
        let base = fit(&ds, &ms, &grid).unwrap();
        let bs = Bootstrapper::new(&ds, &ms, &grid, BootstrapKind::Data).unwrap();
        let identity: Vec<usize> = (0..8).collect();
        let ens = bs.run_with_draws(&[identity], 0).unwrap();
        assert_eq!(ens.coefs[0], base.coef);
        assert_eq!(bs.base_fit().coef, base.coef);
        assert_eq!(ens.v_coef, Mat::zeros(base.coef.len(), base.coef.len()));
    }

    #[test]
    fn residual_identity_resample_is_close_to_base_fit() {
        let ds = dataset(8, 0.3, |i| 1 + i % 3);
        let ms = structure();
        let bs = Bootstrapper::new(&ds, &ms, &LambdaGrid::default(), BootstrapKind::Residual).unwrap();
        let f = bs.fit_draws(&(0..8).collect::<Vec<_>>()).unwrap();
        for (a, b) in f.coef.iter().zip(&bs.base_fit().coef) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_replicate_matches_materialized_dataset() {
        let ds = dataset(6, 0.4, |i| 1 + i % 3);
        let ms = structure();
        let grid = LambdaGrid::default();
        let bs = Bootstrapper::new(&ds, &ms, &grid, BootstrapKind::Residual).unwrap();
        let base = bs.base_fit().clone();
        let store = ResidualStore::from_fit(&ds, &base).unwrap();
        let draws = vec![2, 2, 5, 0, 1, 1];
        let subjects = ds
            .subjects()
            .iter()
            .zip(&draws)
            .map(|(s, &k)| {
                let v0 = &s.visits[0];
                Subject {
                    id: s.id.clone(),
                    visits: store
                        .block(k)
                        .iter()
                        .map(|e| Visit {
                            x: v0.x,
                            z: v0.z.clone(),
                            y: ds.grid().iter().zip(e).map(|(&t, e)| base.fitted(t, v0.x, &v0.z).unwrap() + e).collect(),
                        })
                        .collect(),
                }
            })
            .collect();
        let star = FunctionalDataset::new(ds.grid().to_vec(), subjects).unwrap();
        let direct = fit(&star, &ms, &grid).unwrap();
        let fast = bs.fit_draws(&draws).unwrap();
        assert_eq!(direct.lambda, fast.lambda);
        for (a, b) in direct.coef.iter().zip(&fast.coef) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
        assert!((direct.sse - fast.sse).abs() < 1e-8 * direct.sse.max(1.0));
    }

    #[test]
    fn noiseless_residual_bootstrap_has_zero_covariance() {
        let ds = dataset(10, 0.0, |_| 3);
        let ms = MeanStructure::linear();
        let ens = bootstrap_residuals(&ds, &ms, &LambdaGrid::default(), 20, 5, &Sequential).unwrap();
        assert!(ens.v_coef.max_abs() < 1e-20);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let ds = dataset(9, 0.5, |i| 1 + i % 2);
        let ms = structure();
        let a = bootstrap_data(&ds, &ms, &LambdaGrid::default(), 12, 99, &Sequential).unwrap();
        let b = bootstrap_data(&ds, &ms, &LambdaGrid::default(), 12, 99, &Sequential).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_data(&ds, &ms, &LambdaGrid::default(), 12, 100, &Sequential).unwrap();
        assert_ne!(a.coefs, c.coefs);
    }

    #[test]
    fn covariance_is_recomputable() {
        let ds = dataset(9, 0.5, |_| 2);
        let ens = bootstrap_residuals(&ds, &structure(), &LambdaGrid::default(), 25, 3, &Sequential).unwrap();
        let again = sample_covariance(&ens.coefs, ens.base_coef.len());
        for (a, b) in again.as_slice().iter().zip(ens.v_coef.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        assert!(ens.v_coef.asymmetry() < 1e-12);
        assert_eq!(ens.v_beta().rows(), 7);
    }

    #[test]
    fn visit_varying_covariates_are_rejected() {
        let mut ds = dataset(5, 0.1, |_| 2);
        let mut subjects = ds.subjects().to_vec();
        subjects[0].visits[1].x = 0.77;
        ds = FunctionalDataset::new(ds.grid().to_vec(), subjects).unwrap();
        let r = bootstrap_residuals(&ds, &structure(), &LambdaGrid::default(), 5, 1, &Sequential);
        assert!(matches!(r, Err(Error::Precondition(_))));
        assert!(bootstrap_data(&ds, &structure(), &LambdaGrid::default(), 5, 1, &Sequential).is_ok());
    }

    #[test]
    fn persistent_failures_abort() {
        let r: Result<(Vec<()>, usize)> = run_replicates(&Sequential, 4, 40, 0, |_| Err(Error::Singular("x".into())));
        match r {
            Err(Error::TooManyFailures { allowed, requested, .. }) => {
                assert_eq!(allowed, 2);
                assert_eq!(requested, 40);
            }
            other => panic!("{other:?}"),
        }
        let flaky = core::sync::atomic::AtomicUsize::new(0);
        let (out, failed) = run_replicates(&Sequential, 4, 40, 0, |_| {
            if flaky.fetch_add(1, core::sync::atomic::Ordering::Relaxed) == 3 {
                Err(Error::Singular("once".into()))
            } else {
                Ok(1)
            }
        })
        .unwrap();
        assert_eq!(out.len(), 40);
        assert_eq!(failed, 1);
    }
}
