use std::process::ExitCode;

use clap::Parser;
use crosscov_lab::cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
