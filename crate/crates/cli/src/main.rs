use std::process::ExitCode;

use clap::Parser;
use lrsim::{Cli, ExitStatus};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { ExitStatus::Usage as u8 } else { ExitStatus::Success as u8 });
        }
    };
    let threads = lrsim_tensor::parallel::init_from_env();
    log::debug!("{threads} worker threads");
    match lrsim::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status() as u8)
        }
    }
}
