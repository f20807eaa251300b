use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qbsde_cli::{configure_threads, converge_file, load, parse_n_list, run_file, CliError};

#[derive(Parser)]
#[command(name = "qbsde", version, about = "Quadratic BSDE solver and utility maximisation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Write artifacts here instead of the configured directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without computing anything.
    Validate { config: PathBuf },
    /// Tabulate Y0 against the number of lattice steps.
    Converge {
        config: PathBuf,
        /// Comma-separated, strictly increasing step counts.
        #[arg(long = "N", value_name = "LIST")]
        n_list: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    configure_threads(std::env::var("QBSDE_THREADS").ok().as_deref())?;
    match cli.command {
        Cmd::Run { config, out } => run_file(&config, out.as_deref()),
        Cmd::Validate { config } => {
            load(&config)?;
            println!("ok");
            Ok(0)
        }
        Cmd::Converge { config, n_list, out } => {
            let list = parse_n_list(&n_list)?;
            print!("{}", converge_file(&config, &list, out.as_deref())?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
