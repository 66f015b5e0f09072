//! Library half of the `dirvr` binary. The commands live here so integration
//! tests can drive them without spawning processes.

pub mod args;
pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;
pub mod plot;

use anyhow::Result;
use dirvr::error::ErrorCategory;

use crate::args::{Cli, Command};
use crate::config::{load_config, merge, RunContext};

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_GENERATION: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// A validation failure raised by the CLI layer itself.
pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    dirvr::Error::Validation(msg.into()).into()
}

/// Exit code for an error: library errors by category, everything else
/// (files, config, output) as validation.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<dirvr::Error>()).map(|e| e.category()) {
        Some(ErrorCategory::Generation) => EXIT_GENERATION,
        Some(ErrorCategory::Numerical) => EXIT_NUMERICAL,
        Some(ErrorCategory::Validation) | None => EXIT_VALIDATION,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| usage(format!("cannot configure thread pool: {e}")))?;
    }
    let file = load_config(cli.config.as_deref())?;
    let ctx = RunContext::new(cli.timestamps);
    let name = cli.command.name();
    match &cli.command {
        Command::GenInstance(a) => commands::gen_instance(&merge(a, file.as_ref())?, &ctx, name),
        Command::CheckKkt(a) => commands::check_kkt(&merge(a, file.as_ref())?, &ctx, name),
        Command::Estimate(a) => commands::estimate(&merge(a, file.as_ref())?, &ctx, name),
        Command::Experiment(a) => experiments::experiment(&merge(a, file.as_ref())?, &ctx, name),
        Command::EvalCorpus(a) => commands::eval_corpus(&merge(a, file.as_ref())?, &ctx, name),
    }
}
