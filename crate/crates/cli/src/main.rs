use std::process::ExitCode;

fn main() -> ExitCode {
    byzsgd_cli::run_cli(std::env::args_os(), &mut std::io::stdout().lock())
}
