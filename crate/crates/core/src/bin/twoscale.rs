use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use twoscale_wave::harness::config::{ExperimentConfig, ExperimentKind};
use twoscale_wave::harness::experiments as exp;

#[derive(Parser)]
#[command(name = "twoscale", version, about = "Two-scale wave experiments in a periodic 1D medium")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Accepted for reproducible invocations; every stage is deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Bloch band sweep over the Brillouin zone.
    Dispersion,
    /// Direct solve against the two-scale approximation.
    Validate,
    /// Validation along an admissible sequence of cell counts.
    SweepEpsilon,
    /// Dirichlet eigenmodes of the epsilon-periodic medium.
    Modes,
}

fn run(cli: &Cli) -> twoscale_wave::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.kind = match cli.command {
        Command::Dispersion => ExperimentKind::Dispersion,
        Command::Validate => ExperimentKind::Validate,
        Command::SweepEpsilon => ExperimentKind::SweepEpsilon,
        Command::Modes => ExperimentKind::Modes,
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    log::info!("seed {} (unused, all stages are deterministic)", cli.seed);
    let out = cfg.output.dir.clone();
    match cli.command {
        Command::Dispersion => {
            let table = exp::run_dispersion(&cfg)?;
            exp::write_dispersion(&cfg, &table, &out)?;
            println!("dispersion: {} bands on {} fibers -> {}", table.bands(), table.k.len(), out.display());
        }
        Command::Validate => {
            let outcome = exp::run_validate(&cfg)?;
            exp::write_validation(&cfg, &outcome, &out)?;
            let r = &outcome.report;
            println!(
                "validate: N={} eps={:.4} space_error={:.4e} (t={:.4}) time_error={:.4e} (x={:.4}) -> {}",
                r.n_cells,
                r.epsilon,
                r.space_error,
                r.t_star,
                r.time_error,
                r.x_star,
                out.display()
            );
        }
        Command::SweepEpsilon => {
            let rows = exp::run_sweep_epsilon(&cfg)?;
            exp::write_sweep(&cfg, &rows, &out)?;
            for r in &rows {
                println!("N={:<5} eps={:.5} space_error={:.4e} time_error={:.4e}", r.n_cells, r.epsilon, r.space_error, r.time_error);
            }
        }
        Command::Modes => {
            let (_, grid, modes) = exp::run_modes(&cfg)?;
            exp::write_modes(&cfg, &grid, &modes, &out)?;
            println!("modes: {} eigenpairs -> {}", modes.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
