use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tunectl::{cmd_export, cmd_run, cmd_scenario, cmd_status, cmd_submit, Backend, CliError, Format, RunOptions, Workspace};

#[derive(Parser)]
#[command(name = "tunectl", version, about = "Hyperparameter tuning experiments from the command line")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct StoreArg {
    /// State directory.
    #[arg(long, env = "TUNECTL_STORE")]
    store: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an experiment file and store it.
    Submit {
        file: PathBuf,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Run stored experiments to completion.
    Run {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, value_enum, default_value = "sim")]
        backend: Backend,
        /// Cluster description for the simulator; its experiments are submitted too.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many ticks (sim) or polling rounds (local).
        #[arg(long)]
        max_ticks: Option<u64>,
        /// Write the simulator event log here as JSON lines.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Show experiment phases and best trials.
    Status {
        experiment: Option<String>,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Write the per-trial results table.
    Export {
        experiment: String,
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run a canned cluster scenario and check its assertions.
    Scenario {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(tunekit::sim::scenario::CANNED))]
        name: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        events: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(String, Option<CliError>), CliError> {
    let ok = |s: String| Ok((s, None));
    match cli.command {
        Command::Submit { file, store } => ok(cmd_submit(&Workspace::new(store.store), &file)?),
        Command::Run { store, backend, scenario, seed, max_ticks, events } => {
            let opts = RunOptions { backend, scenario, seed, max_ticks, events };
            ok(cmd_run(&Workspace::new(store.store), &opts)?)
        }
        Command::Status { experiment, store } => ok(cmd_status(&Workspace::new(store.store), experiment.as_deref())?),
        Command::Export { experiment, store, format, output } => {
            let table = cmd_export(&Workspace::new(store.store), &experiment, format)?;
            match output {
                Some(path) => {
                    std::fs::write(&path, table).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
                    ok(String::new())
                }
                None => ok(table),
            }
        }
        Command::Scenario { name, seed, events } => cmd_scenario(&name, seed, events.as_deref()),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok((out, failure)) => {
            print!("{out}");
            match failure {
                None => ExitCode::SUCCESS,
                Some(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
