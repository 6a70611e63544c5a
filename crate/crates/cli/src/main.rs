//! `pong`: generate matrix datasets, train and evaluate the model, and run
//! the gradient and parameter checks.

mod commands;
mod config;

use std::process::ExitCode;

use clap::Command;
use pong::Error;

use commands::Outcome;
use config::{command, RunConfig};

/// Missing or corrupt artifact, or a failed check.
const EXIT_ARTIFACT: u8 = 1;
/// Invalid configuration.
const EXIT_CONFIG: u8 = 2;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnsatisfiableRegime { .. } => EXIT_CONFIG,
        _ => EXIT_ARTIFACT,
    }
}

fn cli() -> Command {
    Command::new("pong")
        .about("Solve, generate and train on visual analogy matrices")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(command("generate", "Generate train/val/test matrix datasets", commands::GENERATE))
        .subcommand(command("train", "Train a model and checkpoint the best validation epoch", commands::TRAIN))
        .subcommand(command("eval", "Evaluate a checkpoint on a dataset split", commands::EVAL))
        .subcommand(command("gradcheck", "Compare model gradients with finite differences", commands::GRADCHECK))
        .subcommand(command("params", "Count trainable parameters", commands::PARAMS))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // usage errors exit with code 2 from clap
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let (cmd, keys, run): (&'static str, _, fn(&RunConfig) -> pong::Result<Outcome>) = match name {
        "generate" => ("generate", commands::GENERATE, commands::generate),
        "train" => ("train", commands::TRAIN, commands::train_cmd),
        "eval" => ("eval", commands::EVAL, commands::eval),
        "gradcheck" => ("gradcheck", commands::GRADCHECK, commands::gradcheck),
        "params" => ("params", commands::PARAMS, commands::params),
        _ => unreachable!("unknown subcommand"),
    };
    match RunConfig::resolve(cmd, keys, sub).and_then(|c| run(&c)) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(EXIT_ARTIFACT),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
