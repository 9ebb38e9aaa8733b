use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dynsde::commands;
use dynsde::{CliError, ExperimentConfig, Method};

#[derive(Parser)]
#[command(name = "dynsde", version, about = "Adaptive-step samplers for score-based diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method and write samples, a report and an optional trace.
    Solve(Common),
    /// Adaptive tolerances against NFE-matched EM and the baselines.
    Benchmark(Common),
    /// Variations of the adaptive solver at one tolerance.
    Ablate(Common),
    /// Linear test SDE stability grid and h -> 0 limit.
    Stability(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// adaptive, em, pc or ode.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated relative tolerances. `solve` and `ablate` use the first.
    #[arg(long, value_delimiter = ',')]
    eps_rel: Option<Vec<f64>>,
    /// Step count for the fixed-step methods (em, pc).
    #[arg(long)]
    steps: Option<usize>,
    /// Write `trace.ndjson` (`solve` only).
    #[arg(long)]
    trace: bool,
}

fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = &c.method {
        Method::parse(m)?;
        cfg.method = m.clone();
    }
    if let Some(list) = &c.eps_rel {
        let first = *list.first().ok_or_else(|| CliError::Config("--eps-rel needs at least one value".into()))?;
        cfg.solver.eps_rel = first;
        cfg.ablate.eps_rel = first;
        cfg.benchmark.eps_rel = list.clone();
    }
    if let Some(n) = c.steps {
        cfg.em.steps = n;
        cfg.pc.steps = n;
    }
    if c.trace {
        cfg.output.trace = true;
    }
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(c) => {
            let (cfg, out) = load(&c)?;
            let r = commands::cmd_solve(&cfg, c.threads, &out)?;
            println!(
                "{}: {} samples, mean NFE {:.1} (+{} denoise), W2 {:.5}, sliced W2 {:.5}",
                r.method, r.n_samples, r.nfe_mean, r.denoise_nfe_total, r.w2, r.sliced_w2
            );
        }
        Command::Benchmark(c) => {
            let (cfg, out) = load(&c)?;
            for r in commands::cmd_benchmark(&cfg, c.threads, &out)? {
                println!("{:<12} eps {:<8} NFE {:>9.1} W2 {:.5}", r.method, r.eps_rel.map(|e| e.to_string()).unwrap_or("-".into()), r.nfe, r.w2);
            }
        }
        Command::Ablate(c) => {
            let (cfg, out) = load(&c)?;
            for r in commands::cmd_ablate(&cfg, c.threads, &out)? {
                println!("{:<30} NFE {:>9.1} W2 {:.5}", r.method, r.nfe, r.w2);
            }
        }
        Command::Stability(c) => {
            let (cfg, out) = load(&c)?;
            let s = commands::cmd_stability(&cfg, &out)?;
            println!(
                "{} cells, {} unstable, {} diverged, {} mismatched; h->0 intercept {:.5} (exact {:.5})",
                s.cells, s.unstable_cells, s.diverged_cells, s.mismatched_cells, s.intercept, s.exact_limit
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dynsde: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
