use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crc_cli::commands::{self, RunFlags};
use crc_cli::config::load_config;
use crc_cli::CliError;

/// Staged reflect-then-correct dialogue runs: ingest, split, generate,
/// annotate, export, infer, evaluate.
#[derive(Parser)]
#[command(name = "crc", version, about)]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "crc.toml")]
    config: PathBuf,

    /// Worker threads for batch stages (overrides the config).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Report validation findings without failing.
    #[arg(long, global = true)]
    lenient: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the corpus, printing counts and findings.
    Ingest,
    /// Partition the corpus into experience and reflection sets.
    Split,
    /// Generate experience-stage responses over the reflection split.
    GenExperience,
    /// Audit generated responses with the annotator backend.
    Annotate,
    /// Export experience, reflection, and correction training files.
    ExportTrain,
    /// Run two-pass inference and write the predictions file.
    Infer,
    /// Score a predictions file and print the metric table.
    Eval,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli.config)?;
    let flags = RunFlags {
        workers: cli.workers,
        lenient: cli.lenient,
    };
    match cli.command {
        Command::Ingest => commands::cmd_ingest(&config, flags),
        Command::Split => commands::cmd_split(&config, flags),
        Command::GenExperience => commands::cmd_gen_experience(&config, flags),
        Command::Annotate => commands::cmd_annotate(&config, flags),
        Command::ExportTrain => commands::cmd_export_train(&config, flags),
        Command::Infer => commands::cmd_infer(&config, flags),
        Command::Eval => commands::cmd_eval(&config, flags),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
