//! The `solve`, `benchmark`, `ablate` and `stability` subcommands.

use std::path::Path;

use serde::Serialize;

use dynsde_core::adaptive::AdaptiveSolver;
use dynsde_core::baseline::{EmSolver, OdeSolver, PcSolver};
use dynsde_core::metrics::{empirical_gaussian_summary, sliced_w2, w2_gaussian_diag};
use dynsde_core::sde::{Integrator, NormOrder, ToleranceVariant};
use dynsde_core::stability::{h_limit_extrapolation, stability_grid, stationary_moments_analytic, stationary_moments_time_average, LinearTestSpec};
use dynsde_core::{BatchState, RunReport, SolverConfig};

use crate::config::{ExperimentConfig, Method};
use crate::error::CliError;
use crate::io::{self, BenchRow, SolveReport, StabilityRow};
use crate::problem::Problem;
use crate::runner::run_batch;

/// Which solver to run, fully configured.
#[derive(Debug, Clone)]
pub enum Run {
    Adaptive(SolverConfig),
    Em,
    EmSteps(usize),
    Pc,
    Ode,
}

/// Solves `cfg.n_samples` samples from the terminal prior with `run`.
/// Sample `i` uses stream `i` for both its prior draw and its solver noise.
pub fn execute(problem: &Problem, cfg: &ExperimentConfig, run: &Run, threads: usize, record_steps: bool) -> Result<RunReport, CliError> {
    let spec = problem.spec()?;
    let ids: Vec<u64> = (0..cfg.n_samples as u64).collect();
    let x0 = problem.prior_for_streams(&ids, cfg.seed);
    let t_end = problem.t_end;
    let h_init = match run {
        Run::Adaptive(s) => s.h_init,
        Run::Ode => cfg.ode.h_init,
        _ => cfg.solver.h_init,
    };
    let mut batch = BatchState::new(x0, problem.dim, 1.0, h_init)?;
    match run {
        Run::Adaptive(s) => {
            let mut s = s.clone();
            s.record_steps = record_steps;
            run_batch(&mut batch, &AdaptiveSolver::new(&spec, s, cfg.seed)?, threads)
        }
        Run::Em | Run::EmSteps(_) => {
            let mut em = cfg.em.build(t_end, record_steps)?;
            if let Run::EmSteps(n) = run {
                em.n_steps = *n;
            }
            run_batch(&mut batch, &EmSolver::new(&spec, &em, cfg.seed)?, threads)
        }
        Run::Pc => {
            let pc = cfg.pc.build(t_end, record_steps)?;
            run_batch(&mut batch, &PcSolver::new(&spec, &pc, cfg.seed)?, threads)
        }
        Run::Ode => {
            let ode = cfg.ode.build(&problem.process, t_end, record_steps)?;
            let flow = spec.probability_flow();
            run_batch(&mut batch, &OdeSolver::new(&flow, &ode)?, threads)
        }
    }
}

pub fn default_run(problem: &Problem, cfg: &ExperimentConfig) -> Result<Run, CliError> {
    Ok(match cfg.method()? {
        Method::Adaptive => Run::Adaptive(cfg.solver.build(&problem.process, problem.t_end, false)?),
        Method::Em => Run::Em,
        Method::Pc => Run::Pc,
        Method::Ode => Run::Ode,
    })
}

/// Scores terminal samples: closed-form W2 of their Gaussian summary against
/// the analytic `p_{t_end}` moments, and sliced W2 against exact draws.
pub struct Scorer {
    reference: dynsde_core::metrics::GaussianSummary,
    exact: Vec<f64>,
    dim: usize,
    n_projections: usize,
    seed: u64,
}

impl Scorer {
    pub fn new(problem: &Problem, n: usize, n_projections: usize, seed: u64) -> Self {
        Self {
            reference: problem.reference(),
            exact: problem.reference_samples(n, seed),
            dim: problem.dim,
            n_projections,
            seed,
        }
    }

    pub fn score(&self, samples: &[f64]) -> Result<(f64, f64), CliError> {
        let w2 = if samples.len() / self.dim >= 2 {
            w2_gaussian_diag(&empirical_gaussian_summary(samples, self.dim)?, &self.reference)?
        } else {
            f64::NAN
        };
        let sw = sliced_w2(samples, &self.exact, self.dim, self.n_projections, self.seed)?;
        Ok((w2, sw))
    }
}

fn bench_row(name: &str, eps_rel: Option<f64>, report: &RunReport, scorer: &Scorer) -> Result<BenchRow, CliError> {
    let (w2, sliced_w2) = scorer.score(&report.samples)?;
    Ok(BenchRow {
        method: name.to_string(),
        eps_rel,
        nfe: report.mean_nfe(),
        steps_accepted: report.steps_accepted,
        steps_rejected: report.steps_rejected,
        w2,
        sliced_w2,
        wall_time_s: report.wall_time.map(|d| d.as_secs_f64()).unwrap_or(0.0),
    })
}

fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<Problem, CliError> {
    cfg.validate()?;
    let problem = Problem::build(cfg)?;
    std::fs::create_dir_all(out)?;
    Ok(problem)
}

/// Writes `samples.bin`, `report.toml`, `timing.txt` and, when enabled,
/// `trace.ndjson`.
pub fn cmd_solve(cfg: &ExperimentConfig, threads: usize, out: &Path) -> Result<SolveReport, CliError> {
    let problem = prepare(cfg, out)?;
    let run = default_run(&problem, cfg)?;
    let report = execute(&problem, cfg, &run, threads, cfg.output.trace)?;
    let scorer = Scorer::new(&problem, cfg.n_samples, cfg.benchmark.n_projections, cfg.seed);
    let (w2, sliced_w2) = scorer.score(&report.samples)?;
    io::write_samples(&out.join("samples.bin"), cfg.n_samples, problem.dim, &report.samples)?;
    let summary = SolveReport {
        method: cfg.method.clone(),
        seed: cfg.seed,
        n_samples: cfg.n_samples,
        dim: problem.dim,
        t_end: problem.t_end,
        nfe_mean: report.mean_nfe(),
        nfe_total: report.nfe,
        denoise_nfe_total: report.denoise_nfe,
        steps_accepted: report.steps_accepted,
        steps_rejected: report.steps_rejected,
        w2,
        sliced_w2,
        per_sample_nfe: report.per_sample_nfe.clone(),
    };
    io::write_toml(&out.join("report.toml"), &summary)?;
    let wall = report.wall_time.map(|d| d.as_secs_f64()).unwrap_or(0.0);
    std::fs::write(out.join("timing.txt"), format!("wall_time_s {wall:.6}\n"))?;
    if cfg.output.trace {
        io::write_trace(&out.join("trace.ndjson"), &report.steps)?;
    }
    Ok(summary)
}

/// Per tolerance: the adaptive solver, then EM with the same mean NFE. Then
/// the fixed-budget baselines. Writes `benchmark.csv`.
pub fn cmd_benchmark(cfg: &ExperimentConfig, threads: usize, out: &Path) -> Result<Vec<BenchRow>, CliError> {
    let problem = prepare(cfg, out)?;
    let scorer = Scorer::new(&problem, cfg.n_samples, cfg.benchmark.n_projections, cfg.seed);
    let mut rows = Vec::new();
    for &eps in &cfg.benchmark.eps_rel {
        let mut s = cfg.solver.build(&problem.process, problem.t_end, false)?;
        s.eps_rel = eps;
        let report = execute(&problem, cfg, &Run::Adaptive(s), threads, false)?;
        rows.push(bench_row("adaptive", Some(eps), &report, &scorer)?);
        let matched = (report.mean_nfe().round() as usize).max(1);
        let em = execute(&problem, cfg, &Run::EmSteps(matched), threads, false)?;
        rows.push(bench_row("em_matched", Some(eps), &em, &scorer)?);
    }
    if cfg.benchmark.baselines {
        let em = execute(&problem, cfg, &Run::Em, threads, false)?;
        rows.push(bench_row("em", None, &em, &scorer)?);
        let pc = execute(&problem, cfg, &Run::Pc, threads, false)?;
        rows.push(bench_row("pc", None, &pc, &scorer)?);
        let ode = execute(&problem, cfg, &Run::Ode, threads, false)?;
        rows.push(bench_row("ode", Some(cfg.ode.eps_rel), &ode, &scorer)?);
    }
    io::write_bench_csv(&out.join("benchmark.csv"), &rows)?;
    Ok(rows)
}

/// Named variations of the adaptive configuration, in output order.
pub fn ablation_grid(base: &SolverConfig) -> Vec<(&'static str, SolverConfig)> {
    let v = |f: &dyn Fn(&mut SolverConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let lamba = |c: &mut SolverConfig| {
        c.integrator = Integrator::Lamba;
        c.extrapolate = false;
        c.r = 0.5;
    };
    vec![
        ("no change", base.clone()),
        ("delta(x')", v(&|c| c.tolerance_variant = ToleranceVariant::CurrentOnly)),
        ("no extrapolation", v(&|c| c.extrapolate = false)),
        ("q=inf", v(&|c| c.norm_order = NormOrder::LInf)),
        ("r=0.5", v(&|c| c.r = 0.5)),
        ("r=0.8", v(&|c| c.r = 0.8)),
        ("r=1", v(&|c| c.r = 1.0)),
        ("lamba r=0.5", v(&lamba)),
        ("lamba r=0.5 extrapolation", v(&|c| {
            lamba(c);
            c.extrapolate = true;
        })),
        ("lamba r=0.5 q=inf", v(&|c| {
            lamba(c);
            c.norm_order = NormOrder::LInf;
        })),
        ("lamba r=0.5 q=inf theta=0.8", v(&|c| {
            lamba(c);
            c.norm_order = NormOrder::LInf;
            c.theta = 0.8;
        })),
    ]
}

/// Writes `ablation.csv` with the benchmark columns.
pub fn cmd_ablate(cfg: &ExperimentConfig, threads: usize, out: &Path) -> Result<Vec<BenchRow>, CliError> {
    let problem = prepare(cfg, out)?;
    let scorer = Scorer::new(&problem, cfg.n_samples, cfg.ablate.n_projections, cfg.seed);
    let mut base = cfg.solver.build(&problem.process, problem.t_end, false)?;
    base.eps_rel = cfg.ablate.eps_rel;
    let mut rows = Vec::new();
    for (name, c) in ablation_grid(&base) {
        let report = execute(&problem, cfg, &Run::Adaptive(c), threads, false)?;
        rows.push(bench_row(name, Some(cfg.ablate.eps_rel), &report, &scorer)?);
    }
    io::write_bench_csv(&out.join("ablation.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilitySummary {
    pub lambda: f64,
    pub sigma: f64,
    /// `h -> 0` intercept of the stationary second moments.
    pub intercept: f64,
    /// `sigma^2 / (2 |lambda|)`.
    pub exact_limit: f64,
    pub cells: usize,
    pub unstable_cells: usize,
    pub diverged_cells: usize,
    /// Cells where divergence and `|1 + lambda h| >= 1` disagree.
    pub mismatched_cells: usize,
}

/// Writes `stability.csv`, `limits.csv` and `stability_summary.toml`.
pub fn cmd_stability(cfg: &ExperimentConfig, out: &Path) -> Result<StabilitySummary, CliError> {
    let s = &cfg.stability;
    let grid = s.grid()?;
    std::fs::create_dir_all(out)?;
    let cells = stability_grid(&grid, cfg.seed)?;
    let rows: Vec<StabilityRow> = cells
        .iter()
        .map(|c| StabilityRow {
            lambda: c.lambda,
            h: c.h,
            analytic_m2: c.analytic_m2,
            empirical_m2: c.empirical.second_moment,
            ci: c.empirical.second_moment_ci,
            stable: c.stable,
            diverged: c.diverged,
        })
        .collect();
    io::write_stability_csv(&out.join("stability.csv"), &rows)?;

    let mut limit_rows = Vec::new();
    let mut m2 = Vec::new();
    for (k, &h) in s.limit_hs.iter().enumerate() {
        let spec = LinearTestSpec::new(s.limit_lambda, s.sigma, h)?;
        let analytic = stationary_moments_analytic(&spec)?.1;
        let est = stationary_moments_time_average(&spec, s.limit_paths, s.limit_steps, cfg.seed.wrapping_add(k as u64))?;
        limit_rows.push((h, analytic, est.second_moment, est.second_moment_ci));
        m2.push(est.second_moment);
    }
    io::write_limit_csv(&out.join("limits.csv"), s.limit_lambda, &limit_rows)?;
    let summary = StabilitySummary {
        lambda: s.limit_lambda,
        sigma: s.sigma,
        intercept: h_limit_extrapolation(&s.limit_hs, &m2)?,
        exact_limit: s.sigma * s.sigma / (2.0 * s.limit_lambda.abs()),
        cells: cells.len(),
        unstable_cells: cells.iter().filter(|c| !c.stable).count(),
        diverged_cells: cells.iter().filter(|c| c.diverged).count(),
        mismatched_cells: cells.iter().filter(|c| c.diverged == c.stable).count(),
    };
    io::write_toml(&out.join("stability_summary.toml"), &summary)?;
    Ok(summary)
}
