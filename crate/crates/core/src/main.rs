use std::process::ExitCode;

use clap::Parser;
use sparsedet::commands::{error_record, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(manifest) => {
            for out in &manifest.outputs {
                println!("{}", out.path.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", error_record(&err));
            ExitCode::FAILURE
        }
    }
}
