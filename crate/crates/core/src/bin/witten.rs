use clap::Parser;
use std::process::ExitCode;
use witten_core::cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
