use std::process::ExitCode;

fn main() -> ExitCode {
    lossforge_cli::main_from(std::env::args_os())
}
