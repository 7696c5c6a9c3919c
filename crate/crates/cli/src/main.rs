use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod dataset;
mod error;
mod job;
mod output;

use config::JobMethod;
use error::CliError;
use job::{FitArgs, ScanArgs};

/// Reduced-variable least-squares fitting and stationary-point scans.
#[derive(Parser)]
#[command(name = "redopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a kinetics model to a `t,y` dataset.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `data` from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<JobMethod>,
        /// Report path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write `t,y_fit,y_exp` samples of the fitted curve.
        #[arg(long)]
        emit_curve: Option<PathBuf>,
        /// Number of evenly spaced curve samples.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        /// Add time and host to the report.
        #[arg(long)]
        provenance: bool,
    },
    /// Enumerate stationary points of a built-in test cost.
    Scan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        provenance: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit {
            config,
            data,
            method,
            out,
            emit_curve,
            grid,
            threads,
            provenance,
        } => job::run_fit(&FitArgs {
            config,
            data,
            method,
            out,
            curve: emit_curve,
            grid,
            threads,
            provenance,
        }),
        Command::Scan {
            config,
            out,
            threads,
            provenance,
        } => job::run_scan(&ScanArgs {
            config,
            out,
            threads,
            provenance,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.kind().to_string());
            let _ = e.print();
            eprintln!("{}", err.diagnostic());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
