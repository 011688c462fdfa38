//! Command-line front end: every stage of the simulator pipeline as a
//! subcommand sharing one JSON-serializable run configuration.

pub mod args;
pub mod codes;
pub mod commands;
pub mod config;
mod error;

pub use args::{Cli, Command};
pub use codes::{CodeIndex, CODE_INDEX_FILE};
pub use config::{RunConfig, CONFIG_FILE};
pub use error::{CliError, ExitStatus, Result};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::TrainAe(a) => commands::train_ae(a),
        Command::Encode(a) => commands::encode(a),
        Command::TrainRnn(a) => commands::train_rnn(a),
        Command::Eval(a) => commands::eval(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Serve(a) => commands::serve(a),
    }
}
