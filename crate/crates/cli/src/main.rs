use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fluidq_cli::commands::{self, TABLE_TOL};
use fluidq_cli::{CliError, Format, Report, RunConfig};
use fluidq_core::SimConfig;

/// Stationary analysis and simulation of a two-buffer fluid queue.
#[derive(Debug, Parser)]
#[command(name = "fluidq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Write results here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Overrides the simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Probability masses, densities and tails of Buffer 1.
    AnalyzeBuffer1,
    /// Decay rate and prefactors of the Buffer-2 tail bounds.
    BoundsBuffer2,
    /// Monte Carlo estimates of both buffers' tails.
    Simulate,
    /// Recompute the published Buffer-1 tables.
    ReproduceTables,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_deref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(tol) = cli.tol {
        cfg.analysis.tol = tol;
    }
    if let Some(seed) = cli.seed {
        cfg.simulation.get_or_insert_with(|| SimConfig::new(1e5, 0)).seed = seed;
    }
    Ok(cfg)
}

fn write(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e)),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn emit(cli: &Cli, cfg: &RunConfig, report: &impl Report) -> Result<(), CliError> {
    let format = cli.format.or(cfg.output.format).unwrap_or(Format::Csv);
    let out = cli.out.as_deref().or(cfg.output.path.as_deref());
    write(out, &report.render(format))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.command {
        Command::AnalyzeBuffer1 => {
            let cfg = load(cli)?;
            let r = commands::analyze_buffer1(&cfg)?;
            eprintln!("kappa = {:.6}, total probability = {:.10}", r.kappa, r.total_probability);
            for m in &r.masses {
                eprintln!("mass {} = {:.6}", m.state, m.mass);
            }
            emit(cli, &cfg, &r)
        }
        Command::BoundsBuffer2 => {
            let cfg = load(cli)?;
            let r = commands::bounds_buffer2(&cfg)?;
            eprintln!("eta = {:.6}, K_lower = {:.6}, K_upper = {:.6}", r.eta, r.k_lower, r.k_upper);
            emit(cli, &cfg, &r)
        }
        Command::Simulate => {
            let cfg = load(cli)?;
            let r = commands::run_simulation(&cfg)?;
            if r.unstable {
                eprintln!("warning: the model is unstable, estimates describe a transient");
            }
            emit(cli, &cfg, &r)
        }
        Command::ReproduceTables => {
            let r = commands::reproduce_tables(cli.tol.unwrap_or(1e-12));
            match cli.format {
                None => write(cli.out.as_deref(), &r.to_text())?,
                Some(f) => write(cli.out.as_deref(), &r.render(f))?,
            }
            let failed = r.cells.iter().filter(|c| c.computed.is_none()).count();
            if failed > 0 {
                return Err(CliError::Tables { failed });
            }
            let off = r.cells.iter().filter(|c| c.flagged).count();
            if off > 0 {
                log::warn!("{off} cell(s) differ from the published tables by more than {TABLE_TOL}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLUIDQ_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
