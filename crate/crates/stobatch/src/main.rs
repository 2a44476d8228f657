use std::process::ExitCode;

use stobatch::cli;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match cli::parse_args(args.into_iter()) {
        Ok(parsed) => ExitCode::from(cli::run(&parsed) as u8),
        Err(msg) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
