use std::process::ExitCode;

fn main() -> ExitCode {
    evitraj_cli::cli::main()
}
