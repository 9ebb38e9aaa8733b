//! Adaptive step-size solvers for score-based diffusion processes.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerics:
//!
//! - [`sde`]: diffusion specs, solver configuration, batch state and run reports.
//! - [`rng`]: counter-based, per-sample random streams.
//! - [`process`]: variance-exploding / variance-preserving processes, their
//!   transition kernels, baseline time grids and Tweedie denoising.
//! - [`score`]: closed-form score oracles and an evaluation counter.
//! - [`adaptive`]: the extrapolated Euler-Maruyama / stochastic Improved Euler
//!   solver with mixed tolerances and per-sample step-size control.
//! - [`baseline`]: fixed-step Euler-Maruyama, reverse-diffusion + Langevin
//!   predictor-corrector and an adaptive Dormand-Prince probability-flow ODE.
//! - [`stability`]: mean and mean-square stability of the scheme on the
//!   linear test SDE.
//! - [`metrics`]: Wasserstein distances used to score sample quality.
//!
//! IO, configuration and the command-line harness live in the `dynsde` crate.

#![no_std]
// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adaptive;
pub mod baseline;
mod error;
pub mod metrics;
pub mod process;
pub mod rng;
pub mod score;
pub mod sde;
pub mod stability;

pub use error::{Error, Result};
pub use process::{Process, ReverseSpec, TweedieConvention, VeParams, VpParams};
pub use rng::{make_rng, RngStream};
pub use score::{CountingScore, ScoreField};
pub use sde::{
    BatchState, DiffusionSpec, Direction, NoiseType, RunReport, SampleSolver, SolverConfig,
    StepRecord,
};
