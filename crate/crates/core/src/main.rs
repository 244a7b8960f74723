use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let args = adaptive_safety::cli::Args::parse();
    match adaptive_safety::cli::run(&args) {
        Ok(report) if report.passed() => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
