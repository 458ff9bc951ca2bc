use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = viewplan_cli::Cli::parse();
    match viewplan_cli::run(cli) {
        Ok(text) => {
            print!("{text}");
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {}", viewplan_cli::describe(&err));
            ExitCode::from(viewplan_cli::exit_code(&err))
        }
    }
}
