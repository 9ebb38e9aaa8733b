#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Configuration, file formats and experiment orchestration for the
//! `dynsde` command-line tool. The numerics live in `dynsde-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod problem;
pub mod runner;

pub use config::{ExperimentConfig, Method};
pub use error::CliError;
