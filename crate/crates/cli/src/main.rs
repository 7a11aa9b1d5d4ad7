//! `longtail`: train and study long-tail sequential recommenders.
//!
//! Commands: gen-synth, train, eval, ablate, verify. Exit codes:
//! 0 success, 1 runtime failure, 2 usage or configuration error.

use clap::{Parser, Subcommand};

use longtail_core::Error;

mod commands;
mod config;
mod manifest;

#[derive(Parser)]
#[command(name = "longtail", version, about = "Long-tail sequential recommendation workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic long-tailed interaction corpus (TSV).
    GenSynth(commands::gen_synth::GenSynthArgs),
    /// Train a model; writes checkpoint, training log, and manifest.
    Train(commands::train::TrainArgs),
    /// Rank held-out items under a checkpoint and report by cohort.
    Eval(commands::eval::EvalArgs),
    /// Train and evaluate across a parameter sweep (k or lambda).
    Ablate(commands::ablate::AblateArgs),
    /// Run the self-verification suites.
    Verify(commands::verify_cmd::VerifyArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::GenSynth(args) => commands::gen_synth::run(args),
        Cmd::Train(args) => commands::train::run(args),
        Cmd::Eval(args) => commands::eval::run(args),
        Cmd::Ablate(args) => commands::ablate::run(args),
        Cmd::Verify(args) => commands::verify_cmd::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let code = match e {
            Error::Config(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}
