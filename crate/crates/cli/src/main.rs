use std::process::ExitCode;

use clap::Parser;
use dirvr_cli::args::Cli;

fn main() -> ExitCode {
    match dirvr_cli::run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(dirvr_cli::exit_code(&e))
        }
    }
}
