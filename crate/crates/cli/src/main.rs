use std::process::ExitCode;

fn main() -> ExitCode {
    pgfield_cli::main_entry(std::env::args_os())
}
