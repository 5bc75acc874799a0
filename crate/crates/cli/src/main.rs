use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(mcnnm_cli::run_from(std::env::args_os(), true))
}
