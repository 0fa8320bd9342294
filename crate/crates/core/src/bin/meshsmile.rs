use std::process::ExitCode;

fn main() -> ExitCode {
    meshsmile::cli::run(std::env::args_os())
}
