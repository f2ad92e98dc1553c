use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = robarch::cli::Cli::parse();
    match robarch::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
