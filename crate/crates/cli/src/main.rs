//! `a2sf`: command-line driver for the eviction-policy engine.
//!
//! Exit codes: 0 success, 1 `--assert-order` violated, 2 usage or
//! validation error.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::{Ctx, Outcome};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx {
        verbose: cli.verbose,
    };
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(ctx, a),
        Command::Run(a) => commands::run(ctx, a),
        Command::Sweep(a) => commands::sweep(ctx, a),
        Command::Compare(a) => commands::compare(ctx, a),
        Command::Ideal(a) => commands::ideal(ctx, a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::AssertionFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
