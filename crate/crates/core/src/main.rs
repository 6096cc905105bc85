use std::process::ExitCode;

use chtumor::cli::{dispatch, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match dispatch(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.render(name));
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("command={name}\nstatus=error\nerror={e}");
            ExitCode::from(2)
        }
    }
}
