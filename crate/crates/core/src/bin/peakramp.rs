use std::process::ExitCode;

fn main() -> ExitCode {
    peakramp::cli::main_with_args(std::env::args_os())
}
