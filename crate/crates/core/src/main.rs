use std::process::ExitCode;

use clap::Parser;
use specdistill::cli::{error_line, run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // help and version also arrive here
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let (line, code) = error_line(&e.into());
            eprintln!("{line}");
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (line, code) = error_line(&e);
            eprintln!("{line}");
            ExitCode::from(code as u8)
        }
    }
}
