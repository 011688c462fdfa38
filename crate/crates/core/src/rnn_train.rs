use std::path::{Path, PathBuf};

use lrsim_data::{CodeSequence, ControlStats, WindowSampler};
use lrsim_nn::{Adam, AdamConfig, Checkpoint, CheckpointMeta};
use lrsim_tensor::{no_grad, SeededRng};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CoreError, Result};
use crate::metrics::{config_hash, CsvLog};
use crate::transition::{sequence_loss, Rnn, RnnConfig, SequenceBatch};

pub const RNN_METRICS: &str = "rnn_metrics.csv";
pub const RNN_EPOCHS: &str = "rnn_epochs.csv";
pub const RNN_LATEST: &str = "rnn.ckpt";
const EVAL_CHUNK: usize = 64;
const INIT_STREAM: u64 = 7;
const EPOCH_STREAM: u64 = 1 << 33;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnTrainConfig {
    pub rnn: RnnConfig,
    pub seq_len: usize,
    pub teacher_forced: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub updates_per_epoch: usize,
    pub window_stride: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for RnnTrainConfig {
    fn default() -> Self {
        RnnTrainConfig {
            rnn: RnnConfig::new(128, 256),
            seq_len: 15,
            teacher_forced: 5,
            batch_size: 32,
            epochs: 20,
            updates_per_epoch: 100,
            window_stride: 1,
            adam: AdamConfig::with_lr(1e-3),
            seed: 0,
        }
    }
}

impl RnnTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.rnn.validate()?;
        self.adam.validate()?;
        if self.seq_len < 2 {
            return Err(CoreError::Config("sequence length must be at least 2".into()));
        }
        if self.teacher_forced == 0 || self.teacher_forced > self.seq_len {
            return Err(CoreError::Config(format!(
                "teacher forcing {} must lie in 1..={}",
                self.teacher_forced, self.seq_len
            )));
        }
        if self.batch_size == 0 || self.updates_per_epoch == 0 {
            return Err(CoreError::Config("batch size and updates per epoch must be positive".into()));
        }
        Ok(())
    }
}

/// Encoded episodes with controls normalized by the dataset statistics.
#[derive(Debug, Clone)]
pub struct CodeDataset {
    sequences: Vec<CodeSequence>,
    controls: Vec<Vec<[f32; 2]>>,
    stats: ControlStats,
    latent_dim: usize,
}

impl CodeDataset {
    pub fn new(sequences: Vec<CodeSequence>, stats: ControlStats) -> Result<Self> {
        let latent_dim = sequences.first().map(|s| s.dim).ok_or_else(|| CoreError::Config("no code sequences".into()))?;
        if sequences.iter().any(|s| s.dim != latent_dim) {
            return Err(CoreError::Config("code sequences differ in latent size".into()));
        }
        let controls = sequences.iter().map(|s| s.controls.iter().map(|&c| stats.normalize(c)).collect()).collect();
        Ok(CodeDataset { sequences, controls, stats, latent_dim })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn stats(&self) -> &ControlStats {
        &self.stats
    }

    pub fn sequences(&self) -> &[CodeSequence] {
        &self.sequences
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.sequences.iter().map(CodeSequence::len).collect()
    }

    pub fn window(&self, seq: usize, start: usize, n: usize) -> (&[f32], &[[f32; 2]]) {
        let d = self.latent_dim;
        (&self.sequences[seq].codes[start * d..(start + n) * d], &self.controls[seq][start..start + n])
    }

    pub fn batch(&self, picks: &[(usize, usize)], n: usize) -> Result<SequenceBatch<f32>> {
        let windows: Vec<_> = picks.iter().map(|&(s, t)| self.window(s, t, n)).collect();
        SequenceBatch::from_windows(&windows, self.latent_dim)
    }
}

fn check_dims(rnn: &Rnn<f32>, data: &CodeDataset) -> Result<()> {
    if data.latent_dim() != rnn.config().latent_dim {
        return Err(CoreError::Config(format!(
            "codes have {} dimensions, the transition model expects {}",
            data.latent_dim(),
            rnn.config().latent_dim
        )));
    }
    Ok(())
}

/// Mean sequence loss over every non-overlapping window.
pub fn heldout_loss(rnn: &Rnn<f32>, data: &CodeDataset, seq_len: usize, teacher_forced: usize) -> Result<f64> {
    check_dims(rnn, data)?;
    let sampler = WindowSampler::new(&data.lengths(), seq_len, seq_len);
    let picks: Vec<_> = (0..sampler.count()).filter_map(|k| sampler.nth(k)).collect();
    if picks.is_empty() {
        return Err(CoreError::Config(format!("held-out codes hold no window of {seq_len} steps")));
    }
    let mut weighted = 0.0;
    no_grad(|| -> Result<()> {
        for chunk in picks.chunks(EVAL_CHUNK) {
            let loss = sequence_loss(rnn, &data.batch(chunk, seq_len)?, teacher_forced)?;
            weighted += f64::from(loss.data()[0]) * chunk.len() as f64;
        }
        Ok(())
    })?;
    Ok(weighted / picks.len() as f64)
}

#[derive(Debug, Clone)]
pub struct RnnTrainer {
    pub config: RnnTrainConfig,
    pub rnn: Rnn<f32>,
    pub opt: Adam<f32>,
    pub epoch: u64,
    pub step: u64,
    pub skipped: u64,
}

impl RnnTrainer {
    pub fn new(config: RnnTrainConfig) -> Result<Self> {
        config.validate()?;
        let rnn = Rnn::new(config.rnn, &mut SeededRng::derived(config.seed, INIT_STREAM))?;
        let opt = Adam::new(config.adam)?;
        Ok(RnnTrainer { config, rnn, opt, epoch: 0, step: 0, skipped: 0 })
    }

    pub fn run_epoch(&mut self, data: &CodeDataset, mut log: impl FnMut(u64, f64) -> Result<()>) -> Result<()> {
        let cfg = &self.config;
        check_dims(&self.rnn, data)?;
        let sampler = WindowSampler::new(&data.lengths(), cfg.seq_len, cfg.window_stride);
        if sampler.count() == 0 {
            return Err(CoreError::Config(format!("no code sequence holds {} steps", cfg.seq_len)));
        }
        let mut rng = SeededRng::derived(cfg.seed, EPOCH_STREAM + self.epoch);
        for _ in 0..cfg.updates_per_epoch {
            let picks: Vec<_> = (0..cfg.batch_size).map(|_| sampler.draw(&mut rng).expect("non-empty")).collect();
            let batch = data.batch(&picks, cfg.seq_len)?;
            let loss = sequence_loss(&self.rnn, &batch, cfg.teacher_forced)?;
            let value = f64::from(loss.data()[0]);
            self.step += 1;
            if value.is_finite() {
                let grads = loss.backward()?;
                let report = self.opt.step(self.rnn.params_mut(), &grads);
                self.skipped += report.skipped_non_finite as u64;
            } else {
                self.skipped += 1;
                log::warn!("step {}: non-finite transition loss, update skipped", self.step);
            }
            log(self.step, value)?;
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn checkpoint(&self, stats: &ControlStats, rate_hz: f64, heldout: Option<f64>) -> Checkpoint {
        let mut extra = serde_json::Map::new();
        extra.insert("kind".into(), json!("transition"));
        extra.insert("rnn".into(), serde_json::to_value(self.config.rnn).expect("config serializes"));
        extra.insert("seq_len".into(), json!(self.config.seq_len));
        extra.insert("teacher_forced".into(), json!(self.config.teacher_forced));
        extra.insert("controls".into(), serde_json::to_value(stats).expect("stats serialize"));
        extra.insert("rate_hz".into(), json!(rate_hz));
        extra.insert("step".into(), json!(self.step));
        extra.insert("adam_t".into(), json!(self.opt.step_count()));
        if let Some(l) = heldout {
            extra.insert("heldout_loss".into(), json!(l));
        }
        let mut ck = Checkpoint::new(CheckpointMeta {
            epoch: self.epoch,
            seed: self.config.seed,
            config_hash: config_hash(&self.config),
            extra,
        });
        ck.insert_all(self.rnn.state());
        ck.insert_all(self.opt.state("opt.rnn"));
        ck
    }

    pub fn resume(config: RnnTrainConfig, ck: &Checkpoint) -> Result<Self> {
        let mut trainer = RnnTrainer::new(config)?;
        let rnn = Rnn::from_checkpoint(ck)?;
        if rnn.config() != &trainer.config.rnn {
            return Err(CoreError::Config("checkpoint transition model differs from the configuration".into()));
        }
        trainer.rnn = rnn;
        let t = ck.meta.extra.get("adam_t").and_then(|v| v.as_u64()).unwrap_or(0);
        trainer.opt.load_state("opt.rnn", t, &ck.tensors_with_prefix("opt.rnn.")?)?;
        trainer.epoch = ck.meta.epoch;
        trainer.step = ck.meta.extra.get("step").and_then(|v| v.as_u64()).unwrap_or(0);
        Ok(trainer)
    }
}

/// Control statistics stored in a transition checkpoint.
pub fn checkpoint_controls(ck: &Checkpoint) -> Result<ControlStats> {
    serde_json::from_value(ck.meta.extra.get("controls").cloned().ok_or_else(|| CoreError::Config("checkpoint lacks `controls`".into()))?)
        .map_err(|e| CoreError::Config(format!("checkpoint `controls`: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnTrainReport {
    pub initial_heldout: f64,
    pub per_epoch: Vec<f64>,
    pub steps: u64,
    pub checkpoint: PathBuf,
}

pub fn rnn_epoch_checkpoint_name(epoch: u64) -> String {
    format!("rnn_epoch_{epoch:03}.ckpt")
}

/// Trains on `train`, logging `rnn_metrics.csv` (step,loss), the held-out
/// loss per epoch in `rnn_epochs.csv`, and a checkpoint per epoch.
pub fn train_rnn(
    config: RnnTrainConfig,
    train: &CodeDataset,
    heldout: &CodeDataset,
    rate_hz: f64,
    out_dir: &Path,
    resume: Option<&Checkpoint>,
) -> Result<RnnTrainReport> {
    let mut trainer = match resume {
        Some(ck) => RnnTrainer::resume(config, ck)?,
        None => RnnTrainer::new(config)?,
    };
    let (n, k) = (trainer.config.seq_len, trainer.config.teacher_forced);
    let initial_heldout = heldout_loss(&trainer.rnn, heldout, n, k)?;
    let mut metrics = CsvLog::open(&out_dir.join(RNN_METRICS), &["step", "loss"], resume.map(|_| trainer.step))?;
    let mut epochs_log = CsvLog::open(&out_dir.join(RNN_EPOCHS), &["epoch", "step", "heldout_loss"], resume.map(|_| trainer.epoch))?;
    if resume.is_none() {
        epochs_log.row(&["0".into(), "0".into(), format!("{initial_heldout:e}")])?;
        epochs_log.flush()?;
    }
    let latest = out_dir.join(RNN_LATEST);
    let mut per_epoch = Vec::new();
    while (trainer.epoch as usize) < trainer.config.epochs {
        trainer.run_epoch(train, |step, loss| metrics.row(&[step.to_string(), format!("{loss:e}")]))?;
        metrics.flush()?;
        let l = heldout_loss(&trainer.rnn, heldout, n, k)?;
        log::info!("epoch {} step {}: held-out loss {l:.5}", trainer.epoch, trainer.step);
        epochs_log.row(&[trainer.epoch.to_string(), trainer.step.to_string(), format!("{l:e}")])?;
        epochs_log.flush()?;
        let ck = trainer.checkpoint(train.stats(), rate_hz, Some(l));
        ck.save(&out_dir.join(rnn_epoch_checkpoint_name(trainer.epoch)))?;
        ck.save(&latest)?;
        per_epoch.push(l);
    }
    Ok(RnnTrainReport { initial_heldout, per_epoch, steps: trainer.step, checkpoint: latest })
}
