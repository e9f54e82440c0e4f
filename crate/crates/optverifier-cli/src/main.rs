//! Command-line entry points: single runs, benchmarks, verifier studies,
//! direct solving/linting, and cassette management.
//!
//! Exit codes are the machine contract: 0 success (for `run`, the pipeline
//! accepted), 2 configuration or input error, 3 pipeline or verification
//! failure. Written JSON artifacts are stable; stdout formatting may change.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::CliConfig;

#[derive(Debug, Parser)]
#[command(
    name = "optverifier",
    about = "Dual-side verification for LLM-formulated optimization models",
    version
)]
struct Cli {
    /// Flat key=value configuration file; flags override file entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cassette file for recording or replaying agent calls.
    #[arg(long, global = true)]
    cassette: Option<PathBuf>,
    /// Use the deterministic rule-based agent suite (offline).
    #[arg(long, global = true)]
    mock_agents: bool,
    /// Solver backend: builtin | cbc | refsolve | external | auto.
    #[arg(long, global = true)]
    solver: Option<String>,
    /// Seed for toy instantiation and perturbation draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker pool size for benchmark runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output path (run record JSON, bench report stem, study JSON).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full pipeline on a problem description file.
    Run {
        /// Plain-text file holding the natural-language description.
        description_file: PathBuf,
    },
    /// Run a JSONL dataset and report solving accuracy.
    Bench {
        dataset: PathBuf,
        /// Dataset label used in the report.
        #[arg(long)]
        name: Option<String>,
    },
    /// Perturbation study: verifier precision/recall over a directory of
    /// positive cases ({id, difficulty, model, structure} JSON files).
    VerifyBench {
        models_dir: PathBuf,
        /// Negative samples per positive.
        #[arg(long, default_value_t = 9)]
        k: usize,
        /// Comma-separated op subset (default: all ops).
        #[arg(long)]
        ops: Option<String>,
    },
    /// Run the pipeline against the live provider, recording a cassette.
    Record { description_file: PathBuf },
    /// Run the pipeline offline against a recorded cassette.
    Replay { description_file: PathBuf },
    /// Ground and solve a model JSON directly (debugging aid).
    Solve {
        model_file: PathBuf,
        /// CSV or JSON file binding external parameters.
        #[arg(long)]
        bindings: Option<PathBuf>,
        /// Bind parameterized models to a toy instance first.
        #[arg(long)]
        toy: bool,
        /// Write the emitted LP document here.
        #[arg(long)]
        lp_out: Option<PathBuf>,
    },
    /// Validate a model JSON against the schema and grammar.
    Lint { model_file: PathBuf },
    /// Cassette utilities.
    Cassette {
        #[command(subcommand)]
        action: CassetteAction,
    },
}

#[derive(Debug, Subcommand)]
enum CassetteAction {
    /// Print the entry count and metadata of a cassette.
    List { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match CliConfig::assemble(&cli) {
        Ok(config) => config,
        Err(message) => {
            eprintln!("configuration error: {message}");
            return ExitCode::from(2);
        }
    };
    let code = match &cli.command {
        Command::Run { description_file } => {
            runner::cmd_run(&config, description_file, runner::RunMode::Normal)
        }
        Command::Record { description_file } => {
            runner::cmd_run(&config, description_file, runner::RunMode::Record)
        }
        Command::Replay { description_file } => {
            runner::cmd_run(&config, description_file, runner::RunMode::Replay)
        }
        Command::Bench { dataset, name } => runner::cmd_bench(&config, dataset, name.as_deref()),
        Command::VerifyBench { models_dir, k, ops } => {
            runner::cmd_verify_bench(&config, models_dir, *k, ops.as_deref())
        }
        Command::Solve {
            model_file,
            bindings,
            toy,
            lp_out,
        } => runner::cmd_solve(
            &config,
            model_file,
            bindings.as_deref(),
            *toy,
            lp_out.as_deref(),
        ),
        Command::Lint { model_file } => runner::cmd_lint(model_file),
        Command::Cassette { action } => match action {
            CassetteAction::List { file } => runner::cmd_cassette_list(file),
        },
    };
    ExitCode::from(code)
}
