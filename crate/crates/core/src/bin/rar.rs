use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RAR_LOG", "warn")).init();
    rartrack::cli::main_with_args(std::env::args_os())
}
