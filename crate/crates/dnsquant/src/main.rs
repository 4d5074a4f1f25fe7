use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(dnsquant::cli::run(std::env::args_os()))
}
