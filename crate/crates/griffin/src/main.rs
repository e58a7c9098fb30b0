use std::process::ExitCode;

use clap::Parser;
use griffin::{dispatch, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.config().and_then(|cfg| dispatch(cli.command, &cfg)) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
