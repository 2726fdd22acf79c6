use std::process::ExitCode;

use clap::Parser;
use wardrop_lab::cli::{error_json, run_scenario, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_scenario(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
