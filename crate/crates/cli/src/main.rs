use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(changegraph_cli::run(std::env::args_os()))
}
