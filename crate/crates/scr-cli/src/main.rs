//! `scr` — command-line workflows for sub-space quantized retrieval.
//!
//! The offline/online split is explicit: `gen` and `split` produce feature
//! files, `train` fits the embedder and codebook, `build` precomputes the
//! retrieval artifacts, and `search`/`eval`/`bench` consume them. Every
//! command is deterministic given `--seed` and its inputs.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or validation
//! error.

mod args;
mod commands;
mod config;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "scr",
    version,
    about = "Sub-space quantized retrieval: synthesize, train, build, search, evaluate, benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    Gen(args::GenArgs),
    Split(args::SplitArgs),
    Train(args::TrainArgs),
    Build(args::BuildArgs),
    Search(args::SearchArgs),
    Eval(args::EvalArgs),
    Bench(args::BenchArgs),
}

/// Errors split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config keys, mismatched artifacts: exit 2.
    Usage(String),
    /// I/O, corrupt files, protocol failures at run time: exit 1.
    Runtime(String),
}

impl From<scr_core::Error> for CliError {
    fn from(err: scr_core::Error) -> Self {
        use scr_core::Error::*;
        match err {
            Validation { .. } | Config(_) | Argument(_) => CliError::Usage(err.to_string()),
            Format { .. } | Protocol(_) | Contract(_) | Corruption(_) | Io(_) => {
                CliError::Runtime(err.to_string())
            }
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::cmd_gen(a),
        Command::Split(a) => commands::cmd_split(a),
        Command::Train(a) => commands::cmd_train(a),
        Command::Build(a) => commands::cmd_build(a),
        Command::Search(a) => commands::cmd_search(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::Bench(a) => commands::cmd_bench(a),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}
