use std::process::ExitCode;

fn main() -> ExitCode {
    regenlab::experiments::cli_main()
}
