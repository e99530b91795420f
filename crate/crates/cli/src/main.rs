use std::io::Write;
use std::process::ExitCode;

use ocnna_cli::{run, CliError};

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = run(std::env::args_os(), &mut out);
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            match &e {
                // clap picks the stream itself: help and version go to stdout.
                CliError::Clap(ce) => {
                    let _ = ce.print();
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(code as u8)
        }
    }
}
