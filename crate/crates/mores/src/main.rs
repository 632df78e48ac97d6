use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use mores::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = String::new();
    let result = run(cli, &mut out);
    print!("{out}");
    std::io::stdout().flush().ok();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mores: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
