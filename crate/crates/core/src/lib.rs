//! Fixed-effects inference for correlated functional data.
//!
//! Population-level mean surfaces `μ(t, x)` are estimated with penalized
//! B-splines under working independence, and their sampling variability is
//! recovered by resampling whole subjects. On top of the fitted ensemble the
//! crate builds pointwise and simultaneous confidence bands, an L² test for
//! the effect of the covariate `x`, and a Monte Carlo harness that scores
//! all of it on synthetic data with known truth.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and
//! the thread pool live in the companion `funfx-cli` crate; anything that
//! parallelizes here does so through the [`Runner`] trait.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod bands;
pub mod bootstrap;
mod error;
pub mod fitcore;
pub mod linalg;
pub mod rng;
pub mod simlab;
pub mod splinebasis;
pub mod stats;
pub mod testkit;

pub use bands::{band_excludes_zero, joint_band, pointwise_band, BandCenter, BandKind, BandResult, EvalGrid, JointOptions, PointwiseMethod};
pub use bootstrap::{bootstrap_data, bootstrap_residuals, BootstrapEnsemble, BootstrapKind, ResidualStore, Runner, Sequential};
pub use error::{Error, Result};
pub use fitcore::{assemble_design, fit, gcv_score, solve_penalized, FitResult, FunctionalDataset, LambdaGrid, Subject, Visit};
pub use splinebasis::{design_row, second_difference_penalty, tensor_penalty, MeanKind, MeanStructure, PenaltyMatrix, UnivariateBasis};
pub use testkit::{bootstrap_null_test, fit_null, test_statistic, NullResampling, QuadratureGrid, TestOutcome};
