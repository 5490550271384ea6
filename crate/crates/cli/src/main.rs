use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use erank_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(outcome.stdout.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(erank_cli::EXIT_INPUT);
            }
            ExitCode::from(outcome.code)
        }
        Err(e) => {
            eprintln!("erank: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
