use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lrsim_core::{AeArch, AeTrainConfig, LossWeights, Objective, RnnConfig, RnnTrainConfig, StepSettings};
use lrsim_data::Geometry;
use lrsim_nn::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    /// Training frames, split evenly over episodes when the policy is `mixed`.
    pub frames: usize,
    pub heldout_frames: usize,
    /// A single driving policy name or `mixed` for one episode per policy.
    pub policy: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSettings {
    pub conv_channels: Vec<usize>,
    pub feature_layer: usize,
    pub epochs: usize,
    pub updates_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_weights: LossWeights,
    pub objective: Objective,
    pub dis_updates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSettings {
    pub hidden: usize,
    pub bias: bool,
    pub seq_len: usize,
    pub teacher_forced: usize,
    /// Always `seq_len - teacher_forced`; kept for readability of the echo.
    pub hallucinated: usize,
    /// Frame rate of the code sequences the model is trained on.
    pub rate_hz: f64,
    pub epochs: usize,
    pub updates_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub window_stride: usize,
    pub seed: u64,
}

/// Every knob of a run. Commands start from a preset or a JSON file, apply
/// their flags on top and write the result to `<out>/config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub latent_dim: usize,
    pub data: DataSettings,
    pub autoencoder: AutoencoderSettings,
    pub transition: TransitionSettings,
    /// Inputs and outputs of the command that wrote this file.
    #[serde(default)]
    pub paths: BTreeMap<String, PathBuf>,
}

/// Loss weights of the reference desk run.
pub const DESK_LOSS_WEIGHTS: LossWeights = LossWeights { prior: 0.03, llike: 1000.0, gan: 1.0 };

impl RunConfig {
    /// 32x64 frames, 128-d codes, batch 32.
    pub fn desk() -> Self {
        let arch = AeArch::desk();
        RunConfig {
            geometry: arch.geometry,
            latent_dim: arch.latent_dim,
            data: DataSettings { frames: 2000, heldout_frames: 800, policy: "mixed".into(), seed: 0 },
            autoencoder: AutoencoderSettings {
                conv_channels: arch.conv_channels,
                feature_layer: arch.feature_layer,
                epochs: 10,
                updates_per_epoch: 200,
                batch_size: 32,
                learning_rate: AdamConfig::default().lr,
                loss_weights: DESK_LOSS_WEIGHTS,
                objective: Objective::VaeGan,
                dis_updates: 1,
                seed: 0,
            },
            transition: TransitionSettings {
                hidden: 256,
                bias: false,
                seq_len: 15,
                teacher_forced: 5,
                hallucinated: 10,
                rate_hz: 5.0,
                epochs: 20,
                updates_per_epoch: 100,
                batch_size: 32,
                learning_rate: 1e-3,
                window_stride: 1,
                seed: 0,
            },
            paths: BTreeMap::new(),
        }
    }

    /// 80x160 frames, 2048-d codes, batch 64, four convolutions.
    pub fn paper() -> Self {
        let arch = AeArch::paper();
        let mut c = RunConfig::desk();
        c.geometry = arch.geometry;
        c.latent_dim = arch.latent_dim;
        c.autoencoder.conv_channels = arch.conv_channels;
        c.autoencoder.feature_layer = arch.feature_layer;
        c.autoencoder.batch_size = 64;
        c.transition.batch_size = 64;
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let c: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if c.transition.teacher_forced + c.transition.hallucinated != c.transition.seq_len {
            return Err(CliError::Usage(format!(
                "config {}: teacher_forced + hallucinated must equal seq_len",
                path.display()
            )));
        }
        Ok(c)
    }

    /// Writes the config to `<dir>/config.json`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let path = dir.join(CONFIG_FILE);
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        lrsim_nn::container::write_atomic(&path, format!("{text}\n").as_bytes())?;
        Ok(path)
    }

    /// Re-derives dependent fields after overrides.
    pub fn settle(&mut self) -> Result<()> {
        let t = &mut self.transition;
        if t.teacher_forced > t.seq_len {
            return Err(CliError::Usage(format!(
                "teacher forcing {} exceeds the sequence length {}",
                t.teacher_forced, t.seq_len
            )));
        }
        t.hallucinated = t.seq_len - t.teacher_forced;
        Ok(())
    }

    pub fn arch(&self) -> AeArch {
        AeArch {
            geometry: self.geometry,
            latent_dim: self.latent_dim,
            conv_channels: self.autoencoder.conv_channels.clone(),
            feature_layer: self.autoencoder.feature_layer,
        }
    }

    pub fn ae_train(&self) -> AeTrainConfig {
        let a = &self.autoencoder;
        AeTrainConfig {
            arch: self.arch(),
            step: StepSettings { weights: a.loss_weights, objective: a.objective, dis_updates: a.dis_updates },
            adam: AdamConfig::with_lr(a.learning_rate),
            epochs: a.epochs,
            updates_per_epoch: a.updates_per_epoch,
            batch_size: a.batch_size,
            seed: a.seed,
        }
    }

    pub fn rnn_train(&self) -> RnnTrainConfig {
        let t = &self.transition;
        RnnTrainConfig {
            rnn: RnnConfig { bias: t.bias, ..RnnConfig::new(self.latent_dim, t.hidden) },
            seq_len: t.seq_len,
            teacher_forced: t.teacher_forced,
            batch_size: t.batch_size,
            epochs: t.epochs,
            updates_per_epoch: t.updates_per_epoch,
            window_stride: t.window_stride,
            adam: AdamConfig::with_lr(t.learning_rate),
            seed: t.seed,
        }
    }

    pub fn set_path(&mut self, role: &str, path: &Path) {
        self.paths.insert(role.to_string(), path.to_path_buf());
    }

    /// The flag value if given, else the path recorded under `role`.
    pub fn path_or(&mut self, role: &str, flag: Option<PathBuf>, name: &str) -> Result<PathBuf> {
        let path = flag
            .or_else(|| self.paths.get(role).cloned())
            .ok_or_else(|| CliError::Usage(format!("missing required argument --{name}")))?;
        self.set_path(role, &path);
        Ok(path)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}
