use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(odesr_cli::run(std::env::args_os()))
}
