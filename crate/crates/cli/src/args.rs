use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Learned driving simulator: generate data, train the autoencoder and the
/// transition model, evaluate, roll out and serve interactive sessions.
///
/// `LRSIM_THREADS` sizes the worker pool; 0 runs single-threaded.
#[derive(Debug, Parser)]
#[command(name = "lrsim", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic road episodes and a dataset manifest.
    GenData(GenDataArgs),
    /// Train the VAE-GAN autoencoder on a dataset.
    TrainAe(TrainAeArgs),
    /// Encode every episode of a dataset into latent code sequences.
    Encode(EncodeArgs),
    /// Train the transition model on encoded sequences.
    TrainRnn(TrainRnnArgs),
    /// Report reconstruction, latent and transition metrics on held-out data.
    Eval(EvalArgs),
    /// Hallucinate frames from a seed episode under scripted actions.
    Rollout(RolloutArgs),
    /// Run the websocket simulation service.
    Serve(ServeArgs),
}

/// Where the run configuration starts before flags are applied.
#[derive(Debug, Args)]
pub struct Preset {
    /// JSON run configuration, e.g. a `config.json` written by an earlier run.
    #[arg(long, value_name = "FILE", conflicts_with = "paper_scale")]
    pub config: Option<PathBuf>,
    /// Start from 80x160 frames, 2048-d codes and batch 64.
    #[arg(long)]
    pub paper_scale: bool,
}

impl Preset {
    pub fn base(&self) -> Result<RunConfig> {
        match (&self.config, self.paper_scale) {
            (Some(path), _) => RunConfig::load(path),
            (None, true) => Ok(RunConfig::paper()),
            (None, false) => Ok(RunConfig::desk()),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub preset: Preset,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training frames over all episodes.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frames of separately seeded held-out episodes.
    #[arg(long)]
    pub heldout_frames: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// straight, lane-change, curve, random-walk or mixed.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainAeArgs {
    #[command(flatten)]
    pub preset: Preset,
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Updates per epoch.
    #[arg(long)]
    pub updates: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub preset: Preset,
    /// Autoencoder checkpoint.
    #[arg(long)]
    pub ae: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frame rate of the code sequences; must divide the dataset rate.
    #[arg(long)]
    pub rate_hz: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainRnnArgs {
    #[command(flatten)]
    pub preset: Preset,
    /// Directory written by `encode`.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Leading steps fed with ground-truth codes.
    #[arg(long)]
    pub teacher: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub updates: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub preset: Preset,
    #[arg(long)]
    pub ae: Option<PathBuf>,
    /// Transition checkpoint; its metrics are reported absent without it.
    #[arg(long)]
    pub rnn: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report directory (default: `eval/` next to the autoencoder checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[command(flatten)]
    pub preset: Preset,
    #[arg(long)]
    pub ae: Option<PathBuf>,
    #[arg(long)]
    pub rnn: Option<PathBuf>,
    /// Episode whose first frames seed the hidden state.
    #[arg(long)]
    pub seed_episode: Option<PathBuf>,
    /// CSV with header `steer_deg,speed_mps`, one row per step.
    #[arg(long)]
    pub actions: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = lrsim_sim::DEFAULT_WARMUP)]
    pub warmup: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ae: PathBuf,
    #[arg(long)]
    pub rnn: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory with the browser cockpit, served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Base for relative `seed_episode` paths in reset messages.
    #[arg(long)]
    pub episode_root: Option<PathBuf>,
}

/// Fails with a usage error unless `path` exists.
pub fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}
