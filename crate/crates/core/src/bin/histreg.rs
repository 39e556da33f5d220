use std::panic;
use std::process::ExitCode;

use clap::Parser;
use histreg::cli::{self, Cli, EXIT_INTERNAL};

fn main() -> ExitCode {
    let args = Cli::parse();
    let level = if args.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = panic::catch_unwind(|| cli::run(args)).unwrap_or_else(|_| {
        eprintln!("error: internal failure");
        EXIT_INTERNAL
    });
    ExitCode::from(code as u8)
}
