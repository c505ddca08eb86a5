//! Command-line entry points and the interactive session protocol.

pub mod args;
pub mod commands;
pub mod exit;
pub mod server;
pub mod session;

use std::ffi::OsString;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::exit::EXIT_INPUT;

fn init_threads() {
    let Ok(value) = std::env::var("NKF_THREADS") else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("NKF_THREADS ignored: {e}");
            }
        }
        _ => log::warn!("NKF_THREADS={value:?} is not a positive integer"),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parse `args` and run the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    init_logging(cli.verbose);
    init_threads();
    let precision = cli.precision.map(Into::into);
    let result = match &cli.command {
        Command::Train(a) => commands::train(a, precision),
        Command::Metrics(a) => commands::metrics(a, precision),
        Command::Fit(a) => commands::fit(a, precision),
        Command::Simulate(a) => commands::simulate(a, precision),
        Command::Export(a) => commands::export(a, precision),
        Command::Serve(a) => commands::serve(a, precision),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
