use std::process::ExitCode;

fn main() -> ExitCode {
    quantamp::cli::run()
}
