use std::process::ExitCode;

use gwm::cli;

fn main() -> ExitCode {
    let result = cli::configure_threads().and_then(|()| cli::run(std::env::args_os()));
    match result {
        Ok(msg) => {
            print!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gwm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
