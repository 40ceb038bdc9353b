use std::process::ExitCode;

use arw_cli::{execute, Cli, EXIT_CONFIG};
use clap::Parser;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (experiment, params) = cli.command.split();
    match execute(experiment, &params) {
        Ok((outcome, code)) => {
            print!("{}", outcome.summary.to_csv());
            if outcome.violations > 0 {
                eprintln!("{}: {} invariant violation(s)", experiment.name(), outcome.violations);
            }
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
