use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = gcfc::cli::run(std::env::args_os(), std::env::var(gcfc::config::SEED_ENV).ok());
    ExitCode::from(code as u8)
}
