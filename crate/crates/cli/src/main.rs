//! `ldba-synth`: train, test, verify and sweep LDBA-guided Q-learning from the command line.

mod args;
mod commands;
mod error;

use std::process::ExitCode;
use std::sync::atomic::Ordering;

use clap::Parser;

use args::{Cli, Command};
use commands::{Finished, STOP};

/// Conventional status for a run stopped by SIGINT.
const INTERRUPTED: u8 = 130;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = ctrlc::set_handler(|| {
        if STOP.swap(true, Ordering::Relaxed) {
            std::process::exit(INTERRUPTED.into());
        }
        eprintln!("interrupt received; stopping after the current step (press again to abort)");
    }) {
        eprintln!("warning: could not install the interrupt handler: {e}");
    }
    let result = match &cli.command {
        Command::Train(a) => commands::cmd_train(a),
        Command::Test(a) => commands::cmd_test(a),
        Command::Oracle(a) => commands::cmd_oracle(a),
        Command::Sweep(a) => commands::cmd_sweep(a),
    };
    match result {
        Ok(Finished::Done) => ExitCode::SUCCESS,
        Ok(Finished::Interrupted) => ExitCode::from(INTERRUPTED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
