#![allow(dead_code)]

use funfx_core::rng::stream_rng;
use funfx_core::{FunctionalDataset, MeanStructure, Subject, UnivariateBasis, Visit};
use nalgebra::DMatrix;
use rand::Rng;

pub fn to_dense(m: &funfx_core::linalg::Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// A small dataset with uniform grid, random visit counts, and `p` nuisance covariates.
pub fn random_dataset(seed: u64, n: usize, max_m: usize, l: usize, p: usize) -> FunctionalDataset {
    let mut rng = stream_rng(seed, 0);
    let grid: Vec<f64> = (0..l).map(|k| k as f64 / (l - 1) as f64).collect();
    let subjects = (0..n)
        .map(|i| {
            let m = rng.random_range(1..=max_m);
            let visits = (0..m)
                .map(|_| Visit {
                    x: rng.random_range(0.0..1.0),
                    z: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    y: (0..l).map(|_| rng.random_range(-2.0..2.0)).collect(),
                })
                .collect();
            Subject { id: format!("s{i}"), visits }
        })
        .collect();
    FunctionalDataset::new(grid, subjects).unwrap()
}

pub fn structures(ds: &FunctionalDataset, dt: usize, dx: usize) -> Vec<MeanStructure> {
    let (t0, t1) = ds.t_range();
    let (x0, x1) = ds.x_range();
    let bt = UnivariateBasis::cubic(t0, t1, dt).unwrap();
    let bx = UnivariateBasis::cubic(x0, x1, dx).unwrap();
    vec![
        MeanStructure::linear(),
        MeanStructure::linear_interaction(),
        MeanStructure::partial_linear(bt.clone()),
        MeanStructure::bivariate(bt, bx),
    ]
}

/// Textbook Cox–de Boor recursion, with the right endpoint assigned to the last span.
pub fn cox_de_boor(knots: &[f64], degree: usize, i: usize, u: f64) -> f64 {
    if degree == 0 {
        let last = *knots.last().unwrap();
        let (a, b) = (knots[i], knots[i + 1]);
        if u == last {
            return if a < b && b == last { 1.0 } else { 0.0 };
        }
        return if a <= u && u < b { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let den1 = knots[i + degree] - knots[i];
    if den1 > 0.0 {
        v += (u - knots[i]) / den1 * cox_de_boor(knots, degree - 1, i, u);
    }
    let den2 = knots[i + degree + 1] - knots[i + 1];
    if den2 > 0.0 {
        v += (knots[i + degree + 1] - u) / den2 * cox_de_boor(knots, degree - 1, i + 1, u);
    }
    v
}
