use std::path::PathBuf;

use funfx_core::bootstrap::Bootstrapper;
use funfx_core::rng::child_seed;
use funfx_core::simlab::{
    generate_dataset, run_coverage_experiment, run_size_power_experiment, CoverageSpec, McReport,
    SizePowerSpec,
};
use funfx_core::testkit::TestOptions;
use funfx_core::{
    bootstrap_null_test, fit, joint_band, pointwise_band, BandResult, BootstrapEnsemble, EvalGrid,
    FitResult, FunctionalDataset, JointOptions, MeanKind, MeanStructure,
};
use serde::Serialize;

use crate::config::{Command, Experiment, RunConfig};
use crate::error::Result;
use crate::ingest::{ingest_csv, write_long};
use crate::output::{histogram, Cell, Writer};
use crate::runner::PoolRunner;

/// Runs `config` and returns the files written.
pub fn run(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let runner = PoolRunner::new(config.threads)?;
    match config.command {
        Command::Fit => run_fit(config),
        Command::Bands => run_bands(config, &runner),
        Command::Test => run_test(config, &runner),
        Command::Simulate => run_simulate(config, &runner),
    }
}

fn load(config: &RunConfig) -> Result<(FunctionalDataset, MeanStructure)> {
    let path = config.input_path.as_ref().expect("validated");
    let ds = ingest_csv(path, config.log1p)?;
    let ms = config.model.structure.build(&ds)?;
    Ok((ds, ms))
}

#[derive(Serialize)]
struct FitSummary<'a> {
    structure: MeanKind,
    n: usize,
    total_visits: usize,
    grid_len: usize,
    beta: &'a [f64],
    tau: &'a [f64],
    lambda: (f64, f64),
    edf: f64,
    sse: f64,
    gcv: f64,
    rows: usize,
    t_domain: (f64, f64),
    x_domain: (f64, f64),
}

fn fit_summary<'a>(ds: &FunctionalDataset, f: &'a FitResult) -> FitSummary<'a> {
    FitSummary {
        structure: f.structure.kind(),
        n: ds.n(),
        total_visits: ds.total_visits(),
        grid_len: ds.grid_len(),
        beta: f.beta(),
        tau: f.tau(),
        lambda: f.lambda,
        edf: f.edf,
        sse: f.sse,
        gcv: f.gcv,
        rows: f.rows,
        t_domain: f.t_domain,
        x_domain: f.x_domain,
    }
}

fn write_fit(
    out: &mut Writer,
    ds: &FunctionalDataset,
    f: &FitResult,
    grid: &EvalGrid,
) -> Result<()> {
    out.json("fit.json", &fit_summary(ds, f))?;
    let values = grid.eval(&f.coef);
    let (ts, xs) = (grid.t_points(), grid.x_points());
    let rows = (0..grid.len()).map(|g| {
        vec![
            Cell::F(ts[g / xs.len()]),
            Cell::F(xs[g % xs.len()]),
            Cell::F(values[g]),
        ]
    });
    out.csv("surface.csv", "fit.json", &["t", "x", "mu"], rows)
}

fn run_fit(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let (ds, ms) = load(config)?;
    let f = fit(&ds, &ms, &config.model.lambda_grid()?)?;
    let grid = EvalGrid::for_fit(&f, config.band.grid_t, config.band.grid_x)?;
    let mut out = Writer::new(config, config.bootstrap.seed)?;
    write_fit(&mut out, &ds, &f, &grid)?;
    Ok(out.written().to_vec())
}

#[derive(Serialize)]
struct CoefficientInterval {
    name: String,
    estimate: f64,
    se: f64,
    lower: f64,
    upper: f64,
}

#[derive(Serialize)]
struct BandSummary<'a> {
    kind: funfx_core::BootstrapKind,
    replicates: usize,
    failures: usize,
    alpha: f64,
    pointwise_method: funfx_core::PointwiseMethod,
    pointwise_mean_width: f64,
    joint_q_hat: Option<f64>,
    joint_mean_width: f64,
    joint_excluded_points: usize,
    joint_draws: usize,
    joint_seed: u64,
    coefficients: &'a [CoefficientInterval],
    replicate_lambdas: &'a [(f64, f64)],
}

fn coefficient_names(ms: &MeanStructure, p: usize) -> Vec<(usize, String)> {
    let mut names: Vec<(usize, String)> = match ms.kind() {
        MeanKind::Linear => ["beta_0", "beta_t", "beta_x"]
            .iter()
            .enumerate()
            .map(|(k, s)| (k, s.to_string()))
            .collect(),
        MeanKind::LinearInteraction => ["beta_0", "beta_t", "beta_x", "beta_tx"]
            .iter()
            .enumerate()
            .map(|(k, s)| (k, s.to_string()))
            .collect(),
        MeanKind::PartialLinear => vec![(ms.dim() - 1, "beta_x".into())],
        _ => Vec::new(),
    };
    names.extend((0..p).map(|k| (ms.dim() + k, format!("tau_{}", k + 1))));
    names
}

fn band_rows(grid: &EvalGrid, point: &BandResult, joint: &BandResult) -> Vec<Vec<Cell>> {
    let (ts, xs) = (grid.t_points(), grid.x_points());
    (0..grid.len())
        .map(|g| {
            let mut row = vec![Cell::F(ts[g / xs.len().max(1)])];
            if !xs.is_empty() {
                row.push(Cell::F(xs[g % xs.len()]));
            }
            row.extend([
                Cell::F(point.center[g]),
                Cell::F(point.lower[g]),
                Cell::F(point.upper[g]),
                Cell::F(joint.center[g]),
                Cell::F(joint.lower[g]),
                Cell::F(joint.upper[g]),
                Cell::F(point.s[g]),
            ]);
            row
        })
        .collect()
}

const BAND_COLUMNS: [&str; 7] = [
    "fit",
    "pointwise_lower",
    "pointwise_upper",
    "joint_center",
    "joint_lower",
    "joint_upper",
    "s",
];

fn run_bands(config: &RunConfig, runner: &PoolRunner) -> Result<Vec<PathBuf>> {
    let (ds, ms) = load(config)?;
    let bs = Bootstrapper::new(
        &ds,
        &ms,
        &config.model.lambda_grid()?,
        config.bootstrap.kind,
    )?;
    let ens: BootstrapEnsemble =
        bs.run(config.bootstrap.replicates, config.bootstrap.seed, runner)?;
    let base = bs.base_fit();
    let b = &config.band;
    let joint_opts = JointOptions {
        draws: b.draws,
        seed: child_seed(config.bootstrap.seed, 2),
        legacy_sqrt_s: b.legacy_sqrt_s,
        center: b.center,
    };

    let surface = EvalGrid::for_fit(base, b.grid_t, b.grid_x)?;
    let point = pointwise_band(base, &ens, &surface, b.alpha, b.method)?;
    let joint = joint_band(&ens, &surface, b.alpha, &joint_opts)?;

    let mut coefficients = Vec::new();
    for (k, name) in coefficient_names(&ms, ds.p()) {
        let band = pointwise_band(base, &ens, &EvalGrid::coefficient(k), b.alpha, b.method)?;
        coefficients.push(CoefficientInterval {
            name,
            estimate: band.center[0],
            se: band.s[0],
            lower: band.lower[0],
            upper: band.upper[0],
        });
    }

    let mut out = Writer::new(config, config.bootstrap.seed)?;
    write_fit(&mut out, &ds, base, &surface)?;
    let summary = BandSummary {
        kind: ens.kind,
        replicates: ens.replicates(),
        failures: ens.failures,
        alpha: b.alpha,
        pointwise_method: b.method,
        pointwise_mean_width: point.mean_width(),
        joint_q_hat: joint.q_hat,
        joint_mean_width: joint.mean_width(),
        joint_excluded_points: joint.excluded_points,
        joint_draws: b.draws,
        joint_seed: joint_opts.seed,
        coefficients: &coefficients,
        replicate_lambdas: &ens.lambdas,
    };
    out.json("bands.json", &summary)?;
    let mut header = vec!["t", "x"];
    header.extend(BAND_COLUMNS);
    out.csv(
        "bands.csv",
        "bands.json",
        &header,
        band_rows(&surface, &point, &joint),
    )?;

    if ms.kind() == MeanKind::PartialLinear {
        let time = EvalGrid::time_component(&ms, base.t_domain, b.grid_t)?;
        let point = pointwise_band(base, &ens, &time, b.alpha, b.method)?;
        let joint = joint_band(&ens, &time, b.alpha, &joint_opts)?;
        let mut header = vec!["t"];
        header.extend(BAND_COLUMNS);
        out.csv(
            "time_bands.csv",
            "bands.json",
            &header,
            band_rows(&time, &point, &joint),
        )?;
    }
    Ok(out.written().to_vec())
}

#[derive(Serialize)]
struct TestSummary<'a> {
    t_obs: f64,
    p_value: f64,
    alpha: f64,
    rejects: bool,
    replicates: usize,
    failures: usize,
    seed: u64,
    resampling: funfx_core::NullResampling,
    integration_grid: (usize, usize),
    alt_lambda: (f64, f64),
    alt_edf: f64,
    null_lambda: (f64, f64),
    null_edf: f64,
    null_draws: &'a [f64],
}

fn run_test(config: &RunConfig, runner: &PoolRunner) -> Result<Vec<PathBuf>> {
    let (ds, ms) = load(config)?;
    let t = &config.test;
    let opts = TestOptions {
        replicates: t.replicates,
        seed: t.seed,
        resampling: t.resampling,
        null_d_t: t.null_d_t,
        grid_t: t.grid_t,
        grid_x: t.grid_x,
    };
    let res = bootstrap_null_test(&ds, &ms, &config.model.lambda_grid()?, &opts, runner)?;
    let mut out = Writer::new(config, t.seed)?;
    out.json(
        "test.json",
        &TestSummary {
            t_obs: res.t_obs,
            p_value: res.p_value,
            alpha: t.alpha,
            rejects: res.rejects(t.alpha),
            replicates: res.replicates,
            failures: res.failures,
            seed: res.seed,
            resampling: t.resampling,
            integration_grid: res.integration_grid,
            alt_lambda: res.alt_fit.lambda,
            alt_edf: res.alt_fit.edf,
            null_lambda: res.null_fit.lambda,
            null_edf: res.null_fit.edf,
            null_draws: &res.null_draws,
        },
    )?;
    let draws = res
        .null_draws
        .iter()
        .enumerate()
        .map(|(b, &v)| vec![Cell::U(b as u64 + 1), Cell::F(v)]);
    out.csv(
        "null_draws.csv",
        "test.json",
        &["replicate", "t_null"],
        draws,
    )?;
    let hist = histogram(&res.null_draws, res.t_obs, 30)
        .into_iter()
        .map(|(lo, hi, c)| vec![Cell::F(lo), Cell::F(hi), Cell::U(c as u64)]);
    out.csv(
        "null_histogram.csv",
        "test.json",
        &["bin_lower", "bin_upper", "count"],
        hist,
    )?;
    Ok(out.written().to_vec())
}

#[derive(Serialize)]
struct SizeRow {
    n: usize,
    rho: f64,
    delta: f64,
    size_by_alpha: std::collections::BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct SimSummary<'a> {
    experiment: Experiment,
    report: &'a McReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    rows: Vec<SizeRow>,
}

fn run_simulate(config: &RunConfig, runner: &PoolRunner) -> Result<Vec<PathBuf>> {
    let sim = &config.sim;
    let mut out = Writer::new(config, sim.dgp.seed)?;
    if sim.export_dataset {
        let ds = generate_dataset(&sim.dgp)?;
        let mut buf = Vec::new();
        write_long(&ds, &mut buf)?;
        out.raw(
            "dataset.csv",
            std::str::from_utf8(&buf).expect("csv is utf-8"),
        )?;
    }
    match sim.experiment {
        Experiment::Coverage => {
            let spec = CoverageSpec {
                nsim: sim.nsim,
                ..sim.coverage.clone()
            };
            let report = run_coverage_experiment(&sim.dgp, &spec, runner)?;
            out.json(
                "report.json",
                &SimSummary {
                    experiment: sim.experiment,
                    report: &report,
                    rows: Vec::new(),
                },
            )?;
            let rows = report.targets.iter().flat_map(|t| {
                t.levels.iter().map(move |l| {
                    let opt = |v: Option<f64>| Cell::S(v.map_or(String::new(), |v| v.to_string()));
                    vec![
                        Cell::S(t.name.clone()),
                        Cell::F(t.rho),
                        Cell::F(l.alpha),
                        Cell::F(t.integrated_bias),
                        Cell::F(t.integrated_variance),
                        Cell::F(l.acp_point),
                        Cell::F(l.al_point),
                        opt(l.acp_joint),
                        opt(l.al_joint),
                    ]
                })
            });
            out.csv(
                "coverage.csv",
                "report.json",
                &[
                    "target",
                    "rho",
                    "alpha",
                    "integrated_bias",
                    "integrated_variance",
                    "acp_point",
                    "al_point",
                    "acp_joint",
                    "al_joint",
                ],
                rows,
            )?;
        }
        Experiment::SizePower => {
            let spec = SizePowerSpec {
                nsim: sim.nsim,
                ..sim.size_power.clone()
            };
            let report = run_size_power_experiment(&sim.dgp, &spec, runner)?;
            let rows = report
                .cells
                .iter()
                .map(|c| SizeRow {
                    n: c.n,
                    rho: c.rho,
                    delta: c.delta,
                    size_by_alpha: c
                        .rates
                        .iter()
                        .map(|r| (format!("{:.2}", r.alpha), r.rate))
                        .collect(),
                })
                .collect();
            out.json(
                "report.json",
                &SimSummary {
                    experiment: sim.experiment,
                    report: &report,
                    rows,
                },
            )?;
            let rows = report.cells.iter().flat_map(|c| {
                c.rates.iter().map(move |r| {
                    vec![
                        Cell::U(c.n as u64),
                        Cell::F(c.rho),
                        Cell::F(c.delta),
                        Cell::F(r.alpha),
                        Cell::F(r.rate),
                        Cell::F(r.se),
                    ]
                })
            });
            out.csv(
                "rejection.csv",
                "report.json",
                &["n", "rho", "delta", "alpha", "rate", "se"],
                rows,
            )?;
        }
    }
    Ok(out.written().to_vec())
}
