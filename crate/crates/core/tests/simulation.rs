use funfx_core::bands::max_statistics;
use funfx_core::linalg::{psd_factor, Cholesky, Mat};
use funfx_core::rng::stream_rng;
use funfx_core::simlab::{eigenfunctions, generate_dataset, sample_scores, DgpConfig, MeanFunction, VisitCount, VisitTimeScale};
use funfx_core::stats::{normal_quantile, quantile};
use funfx_core::{joint_band, BootstrapEnsemble, BootstrapKind, EvalGrid, JointOptions};
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn normal_quantile_matches_statrs() {
    let n = Normal::new(0.0, 1.0).unwrap();
    for k in 1..2000 {
        let p = k as f64 / 2000.0;
        let want = n.inverse_cdf(p);
        assert!((normal_quantile(p) - want).abs() < 1e-9 * (1.0 + want.abs()), "p={p}");
    }
    for p in [1e-10, 1e-6, 0.975, 1.0 - 1e-8] {
        let want = n.inverse_cdf(p);
        assert!((normal_quantile(p) - want).abs() < 1e-8 * (1.0 + want.abs()), "p={p}");
    }
}

#[test]
fn type7_quantiles() {
    let v = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
    assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
    assert_eq!(quantile(&v, 1.0).unwrap(), 9.0);
    assert!((quantile(&v, 0.5).unwrap() - 3.5).abs() < 1e-15);
    assert!((quantile(&v, 0.25).unwrap() - 1.75).abs() < 1e-15);
    assert!((quantile(&v, 0.9).unwrap() - 6.9).abs() < 1e-12);
}

fn correlation(cfg: &DgpConfig, m: usize) -> Mat {
    let mut r = Mat::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            r[(j, k)] = cfg.visit_correlation(j, k, m);
        }
    }
    r
}

#[test]
fn score_covariance_matches_target() {
    for visit_time in [VisitTimeScale::Index, VisitTimeScale::UnitInterval] {
        let cfg = DgpConfig { rho: 0.6, visit_time, ..Default::default() };
        let m = 5;
        let r = correlation(&cfg, m);
        let factor = Cholesky::factor(&r).unwrap().lower();
        let mut rng = stream_rng(3, 0);
        let reps = 40_000;
        let mut cov = [[[0.0; 5]; 5]; 3];
        for _ in 0..reps {
            let s = sample_scores(&cfg, &factor, &mut rng);
            for l in 0..3 {
                for j in 0..m {
                    for k in 0..m {
                        cov[l][j][k] += s[l][j] * s[l][k];
                    }
                }
            }
        }
        for l in 0..3 {
            let lam = cfg.eigenvalues[l];
            for j in 0..m {
                for k in 0..m {
                    let got = cov[l][j][k] / reps as f64;
                    let want = lam * r[(j, k)];
                    assert!((got - want).abs() < 0.02 * lam + 0.02 * want.abs(), "l={l} ({j},{k}): {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn generated_curves_have_target_variance() {
    let cfg = DgpConfig { n: 2000, grid_len: 21, mean: MeanFunction::reference_linear(), seed: 5, ..Default::default() };
    let ds = generate_dataset(&cfg).unwrap();
    let grid = ds.grid().to_vec();
    for (l, &t) in grid.iter().enumerate() {
        let resid: Vec<f64> =
            ds.subjects().iter().map(|s| s.visits[0].y[l] - cfg.mean.eval(t, s.visits[0].x)).collect();
        let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
        let phi = eigenfunctions(t);
        let want: f64 = cfg.sigma2 + (0..3).map(|k| cfg.eigenvalues[k] * phi[k] * phi[k]).sum::<f64>();
        assert!((var - want).abs() < 0.12 * want, "t={t}: {var} vs {want}");
    }
}

#[test]
fn generation_is_seeded() {
    let cfg = DgpConfig { n: 10, visits: VisitCount::Uniform { lo: 2, hi: 4 }, tau: Some(8.0), ..Default::default() };
    let a = generate_dataset(&cfg).unwrap();
    let b = generate_dataset(&cfg).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&DgpConfig { seed: 1, ..cfg.clone() }).unwrap();
    assert_ne!(a, c);
    assert!(a.subjects().iter().all(|s| (2..=4).contains(&s.visits.len())));
    assert_eq!(a.p(), 1);
    assert!(a.covariates_visit_invariant());
}

#[test]
fn psd_factor_reconstructs_rank_deficient_covariance() {
    let rows = [[1.0, 2.0, 0.0, -1.0], [0.5, -1.0, 3.0, 2.0]];
    let mut v = Mat::zeros(4, 4);
    for r in &rows {
        for i in 0..4 {
            for j in 0..4 {
                v[(i, j)] += r[i] * r[j];
            }
        }
    }
    let f = psd_factor(&v, 1e-10).unwrap();
    assert_eq!(f.cols(), 2);
    let back = f.matmul(&f.transpose());
    for i in 0..4 {
        for j in 0..4 {
            assert!((back[(i, j)] - v[(i, j)]).abs() < 1e-10);
        }
    }
}

fn independent_pair() -> BootstrapEnsemble {
    let coefs = vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]];
    BootstrapEnsemble::new(BootstrapKind::Data, 0, vec![0.0, 0.0], 2, coefs, vec![(0.0, 0.0); 4], 0)
}

#[test]
fn max_statistic_of_independent_normals() {
    let ens = independent_pair();
    let grid = EvalGrid::from_rows(vec![], vec![], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let opts = JointOptions { draws: 200_000, seed: 17, ..Default::default() };
    let (maxima, s, excluded) = max_statistics(&ens, &grid, &opts).unwrap();
    assert_eq!(excluded, 0);
    assert!(s.iter().all(|&v| (v - (4.0f64 / 3.0).sqrt()).abs() < 1e-12));
    let n = Normal::new(0.0, 1.0).unwrap();
    for q in [1.0, 2.0, 2.5] {
        let emp = maxima.iter().filter(|&&m| m <= q).count() as f64 / maxima.len() as f64;
        let exact = (2.0 * n.cdf(q) - 1.0).powi(2);
        assert!((emp - exact).abs() < 0.005, "q={q}: {emp} vs {exact}");
    }
    let band = joint_band(&ens, &grid, 0.05, &opts).unwrap();
    let exact_q = n.inverse_cdf(0.5 + 0.5 * 0.95f64.sqrt());
    assert!((band.q_hat.unwrap() - exact_q).abs() < 0.02);
}

#[test]
fn max_statistic_of_perfectly_correlated_points() {
    let ens = independent_pair();
    let grid = EvalGrid::from_rows(vec![], vec![], &[vec![1.0, 0.0], vec![2.0, 0.0], vec![-0.5, 0.0]]);
    let opts = JointOptions { draws: 100_000, seed: 4, ..Default::default() };
    let band = joint_band(&ens, &grid, 0.05, &opts).unwrap();
    assert!((band.q_hat.unwrap() - 1.959964).abs() < 0.02);
}
