//! Parallel batch execution.
//!
//! Samples are independent (own stream, own step size), so the batch is split
//! into per-sample views and solved on a rayon pool. Results do not depend on
//! the number of threads.

use std::time::Instant;

use rayon::prelude::*;

use dynsde_core::{BatchState, RunReport, SampleSolver};

use crate::error::CliError;

/// `threads == 0` uses one worker per available core.
pub fn run_batch<S: SampleSolver + ?Sized>(
    batch: &mut BatchState,
    solver: &S,
    threads: usize,
) -> Result<RunReport, CliError> {
    if batch.dim() != solver.dim() {
        return Err(dynsde_core::Error::DimensionMismatch {
            expected: solver.dim(),
            got: batch.dim(),
        }
        .into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let results: Vec<_> = pool.install(|| {
        batch
            .views_mut()
            .into_par_iter()
            .map(|view| solver.solve_sample(view))
            .collect()
    });
    let wall = start.elapsed();
    // Results are in sample order, so the first error is the lowest index.
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut report = RunReport::assemble(batch, outcomes);
    report.wall_time = Some(wall);
    Ok(report)
}
