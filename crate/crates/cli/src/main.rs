use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedlab_cli::{compare, oracle, run, CliError, RunOptions};

/// Deterministic federated-optimization experiments.
#[derive(Parser)]
#[command(name = "fedlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment, write its CSV ledger and print a report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides FEDLAB_SEED and the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several experiments on the same problem seed and tabulate progress to a tolerance.
    Compare {
        #[arg(long = "config", required = true, num_args = 1)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the centralized oracle objective.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn dispatch(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Run { config, seed, out } => {
            let (report, path) = run(&config, &RunOptions { seed, out })?;
            log::info!("ledger written to {}", path.display());
            Ok(report.render())
        }
        Command::Compare { configs, tol, seed } => Ok(compare(&configs, tol, seed)?.1),
        Command::Oracle { config, seed } => oracle(&config, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::try_parse().unwrap_or_else(|e| {
        let code = if e.use_stderr() { 2 } else { 0 };
        let _ = e.print();
        std::process::exit(code);
    });
    match dispatch(cli.command) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
