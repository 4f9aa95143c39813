use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pwap_cli::{cmd_gp_check, cmd_solve, study, CliError, Command, RunConfig};
use tracing::error;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "pwap", version, about = "Plane-wave ground states and a posteriori error studies")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve at the reference cutoff and write a ground-state archive.
    Solve(Common),
    /// Convergence and estimator study over the configured cutoffs.
    Study(Common),
    /// Decay of the GP difference operator (one-dimensional model only).
    GpCheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "PWAP_THREADS")]
    threads: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (cmd, args) = match cli.command {
        Sub::Solve(a) => (Command::Solve, a),
        Sub::Study(a) => (Command::Study, a),
        Sub::GpCheck(a) => (Command::GpCheck, a),
    };
    let cfg = RunConfig::from_file(&args.config, cmd)?;
    let out = args.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    match cmd {
        Command::Solve => cmd_solve(&cfg, &out).map(|_| ()),
        Command::Study => {
            let res = study::run_study(&cfg, &out, args.threads)?;
            match res.failures() {
                0 => Ok(()),
                n => Err(CliError::Failed(format!("{n} cutoff(s) failed; see the status column"))),
            }
        }
        Command::GpCheck => cmd_gp_check(&cfg, &out).map(|_| ()),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("PWAP_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
