//! `doclayout`: batch jobs for document layout analysis.
//!
//! Exit status 0 on success, 1 for usage errors, 2 for data errors and 3 for
//! detector failures.

mod augment;
mod config;
mod error;
mod eval;
mod infer;
mod schedule;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use error::Exit;

#[derive(Debug, Parser)]
#[command(name = "doclayout", version, about = "Document layout analysis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a detector over every page of a dataset and write a result file.
    Infer(infer::InferArgs),
    /// Score a result file against ground truth (Dice, optionally mAP).
    Eval(eval::EvalArgs),
    /// Print the learning-rate schedule as CSV, or its phase arithmetic.
    Schedule(schedule::ScheduleArgs),
    /// Write seeded augmented copies of a dataset.
    Augment(augment::AugmentArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(Exit::Usage as u8),
            };
        }
    };
    let result = match cli.command {
        Command::Infer(a) => infer::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Schedule(a) => schedule::run(a),
        Command::Augment(a) => augment::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.exit as u8)
        }
    }
}
