use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rbirg_cli::{compare_modes, run_experiment, validate_experiment, CliError, Experiment};

/// Randomized block iterative regularized subgradient experiments.
#[derive(Parser)]
#[command(name = "rbirg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured mode and write its artifacts.
    Run { config: PathBuf },
    /// Print the schedule condition report.
    Validate { config: PathBuf },
    /// Run RB-IRG and the two-loop sweep and write comparison.csv.
    Compare { config: PathBuf },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config } => {
            let exp = Experiment::load(&config)?;
            let s = run_experiment(&exp)?;
            for f in &s.files {
                println!("wrote {}", f.display());
            }
            println!("{}", s.summary);
        }
        Command::Validate { config } => {
            let exp = Experiment::load(&config)?;
            print!("{}", validate_experiment(&exp)?);
        }
        Command::Compare { config } => {
            let exp = Experiment::load(&config)?;
            let (rows, path) = compare_modes(&exp)?;
            print!("{}", rbirg_cli::comparison_csv(&rows));
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
