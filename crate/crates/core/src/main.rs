use std::process::ExitCode;

fn main() -> ExitCode {
    mpd_core::cli::main()
}
