use std::process::ExitCode;

fn main() -> ExitCode {
    driftscope::cli::main_with_args(std::env::args_os())
}
