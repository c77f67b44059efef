use std::process::ExitCode;

use clap::Parser;
use microteleop_io::cli::{execute, Cli};

fn main() -> ExitCode {
    ExitCode::from(execute(Cli::parse()))
}
