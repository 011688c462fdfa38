use std::path::{Path, PathBuf};

use lrsim_nn::{AdamConfig, Checkpoint, CheckpointMeta};
use lrsim_tensor::{no_grad, SeededRng};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::arch::AeArch;
use crate::error::{CoreError, Result};
use crate::frames::FrameSet;
use crate::metrics::{config_hash, CsvLog};
use crate::vaegan::{aborted_breakdown, train_step, AeOptimizers, LossBreakdown, StepNoise, StepSettings, VaeGan};

pub const AE_METRICS: &str = "ae_metrics.csv";
pub const AE_EPOCHS: &str = "ae_epochs.csv";
pub const AE_LATEST: &str = "ae.ckpt";
const EVAL_CHUNK: usize = 64;
const INIT_STREAM: u64 = 0;
const EPOCH_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub arch: AeArch,
    pub step: StepSettings,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub updates_per_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            arch: AeArch::desk(),
            step: StepSettings::default(),
            adam: AdamConfig::default(),
            epochs: 10,
            updates_per_epoch: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl AeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.adam.validate()?;
        if self.batch_size < 2 {
            return Err(CoreError::Config("batch size must be at least 2 for batch normalization".into()));
        }
        if self.updates_per_epoch == 0 {
            return Err(CoreError::Config("updates per epoch must be positive".into()));
        }
        Ok(())
    }
}

/// Eval-mode reconstruction quality on [-1, 1] pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub mse: f64,
    /// `10 log10(4 / mse)`; infinite for a perfect reconstruction.
    #[serde(with = "inf_as_string")]
    pub psnr: f64,
}

/// Peak signal-to-noise ratio for [-1, 1] pixels (peak-to-peak range 2).
pub fn psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (4.0 / mse).log10()
    }
}

pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::format_psnr(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Num {
            F(f64),
            S(String),
        }
        Ok(match Num::deserialize(d)? {
            Num::F(v) => v,
            Num::S(s) if s == "inf" => f64::INFINITY,
            Num::S(s) => return Err(serde::de::Error::custom(format!("bad psnr `{s}`"))),
        })
    }
}

/// Squared error between two equally sized pixel buffers.
pub fn reconstruction_stats(x: &[f32], x_rec: &[f32]) -> ReconstructionReport {
    let sum: f64 = x.iter().zip(x_rec).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum();
    let mse = sum / x.len().max(1) as f64;
    ReconstructionReport { mse, psnr: psnr(mse) }
}

/// Encodes with `z = mu` and decodes, all in eval mode.
pub fn eval_reconstruction(model: &VaeGan<f32>, frames: &FrameSet) -> Result<ReconstructionReport> {
    let n = frames.len();
    let mut sum = 0.0f64;
    no_grad(|| -> Result<()> {
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let x = frames.batch::<f32>(&idx);
            let rec = model.decode(&model.encode(&x)?.mu)?;
            sum += x.data().iter().zip(rec.data()).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum::<f64>();
        }
        Ok(())
    })?;
    let mse = sum / (n * frames.geometry().frame_len()).max(1) as f64;
    Ok(ReconstructionReport { mse, psnr: psnr(mse) })
}

/// Eval-mode codes `mu` for every frame, `[N, D]` row-major.
pub fn encode_frames(model: &VaeGan<f32>, frames: &FrameSet) -> Result<Vec<f32>> {
    let n = frames.len();
    let mut out = Vec::with_capacity(n * model.latent_dim());
    no_grad(|| -> Result<()> {
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            out.extend_from_slice(model.encode(&frames.batch::<f32>(&idx))?.mu.data());
        }
        Ok(())
    })?;
    Ok(out)
}

/// Model, optimizers and counters of an autoencoder run.
#[derive(Debug, Clone)]
pub struct AeTrainer {
    pub config: AeTrainConfig,
    pub model: VaeGan<f32>,
    pub opts: AeOptimizers<f32>,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed update steps, including rolled-back ones.
    pub step: u64,
    pub aborted: u64,
}

impl AeTrainer {
    pub fn new(config: AeTrainConfig) -> Result<Self> {
        config.validate()?;
        let model = VaeGan::new(config.arch.clone(), &mut SeededRng::derived(config.seed, INIT_STREAM))?;
        let opts = AeOptimizers::new(config.adam)?;
        Ok(AeTrainer { config, model, opts, epoch: 0, step: 0, aborted: 0 })
    }

    /// Runs one epoch, calling `log` after every step.
    pub fn run_epoch(&mut self, data: &FrameSet, mut log: impl FnMut(u64, &LossBreakdown) -> Result<()>) -> Result<()> {
        if data.is_empty() {
            return Err(CoreError::Config("training set is empty".into()));
        }
        if data.geometry() != self.config.arch.geometry {
            return Err(CoreError::Config(format!(
                "data geometry {:?} differs from model geometry {:?}",
                data.geometry(),
                self.config.arch.geometry
            )));
        }
        let mut rng = SeededRng::derived(self.config.seed, EPOCH_STREAM + self.epoch);
        let (b, d) = (self.config.batch_size, self.config.arch.latent_dim);
        for _ in 0..self.config.updates_per_epoch {
            let x = data.batch::<f32>(&data.sample_indices(&mut rng, b));
            let noise = StepNoise::draw(&mut rng, b, d);
            self.step += 1;
            let losses = match train_step(&mut self.model, &mut self.opts, &x, &noise, &self.config.step) {
                Ok(l) => l,
                Err(CoreError::NonFinite(msg)) => {
                    self.aborted += 1;
                    log::warn!("step {} rolled back: {msg}", self.step);
                    aborted_breakdown()
                }
                Err(e) => return Err(e),
            };
            log(self.step, &losses)?;
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn checkpoint(&self, eval: Option<ReconstructionReport>) -> Checkpoint {
        let mut extra = serde_json::Map::new();
        extra.insert("kind".into(), json!("autoencoder"));
        extra.insert("arch".into(), serde_json::to_value(&self.config.arch).expect("arch serializes"));
        extra.insert("step".into(), json!(self.step));
        extra.insert("aborted_steps".into(), json!(self.aborted));
        extra.insert("adam_t".into(), json!([self.opts.enc.step_count(), self.opts.gen.step_count(), self.opts.dis.step_count()]));
        if let Some(e) = eval {
            extra.insert("eval".into(), serde_json::to_value(e).expect("report serializes"));
        }
        let mut ck = Checkpoint::new(CheckpointMeta {
            epoch: self.epoch,
            seed: self.config.seed,
            config_hash: config_hash(&self.config),
            extra,
        });
        ck.insert_all(self.model.state());
        ck.insert_all(self.opts.enc.state("opt.enc"));
        ck.insert_all(self.opts.gen.state("opt.gen"));
        ck.insert_all(self.opts.dis.state("opt.dis"));
        ck
    }

    /// Restores model, optimizers and counters; the stored architecture must
    /// match `config`.
    pub fn resume(config: AeTrainConfig, ck: &Checkpoint) -> Result<Self> {
        let mut trainer = AeTrainer::new(config)?;
        let model = VaeGan::from_checkpoint(ck)?;
        if model.arch() != &trainer.config.arch {
            return Err(CoreError::Config("checkpoint architecture differs from the configuration".into()));
        }
        trainer.model = model;
        let counts: Vec<u64> = ck
            .meta
            .extra
            .get("adam_t")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| CoreError::Config("checkpoint lacks optimizer step counts".into()))?;
        let [te, tg, td] = counts[..] else {
            return Err(CoreError::Config("optimizer step counts malformed".into()));
        };
        trainer.opts.enc.load_state("opt.enc", te, &ck.tensors_with_prefix("opt.enc.")?)?;
        trainer.opts.gen.load_state("opt.gen", tg, &ck.tensors_with_prefix("opt.gen.")?)?;
        trainer.opts.dis.load_state("opt.dis", td, &ck.tensors_with_prefix("opt.dis.")?)?;
        trainer.epoch = ck.meta.epoch;
        trainer.step = ck.meta.extra.get("step").and_then(|v| v.as_u64()).unwrap_or(0);
        trainer.aborted = ck.meta.extra.get("aborted_steps").and_then(|v| v.as_u64()).unwrap_or(0);
        Ok(trainer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainReport {
    pub initial: ReconstructionReport,
    pub per_epoch: Vec<ReconstructionReport>,
    pub steps: u64,
    pub aborted_steps: u64,
    pub checkpoint: PathBuf,
}

pub fn epoch_checkpoint_name(epoch: u64) -> String {
    format!("ae_epoch_{epoch:03}.ckpt")
}

/// Full training run writing `ae_metrics.csv`, `ae_epochs.csv` and one
/// checkpoint per epoch into `out_dir`. Held-out frames give the per-epoch
/// eval-mode reconstruction error; `resume` continues from a checkpoint.
pub fn train_ae(
    config: AeTrainConfig,
    data: &FrameSet,
    heldout: &FrameSet,
    out_dir: &Path,
    resume: Option<&Checkpoint>,
) -> Result<AeTrainReport> {
    if data.is_empty() {
        return Err(CoreError::Config("training set is empty".into()));
    }
    let mut trainer = match resume {
        Some(ck) => AeTrainer::resume(config, ck)?,
        None => AeTrainer::new(config)?,
    };
    let initial = eval_reconstruction(&trainer.model, heldout)?;
    let resumed = resume.map(|_| trainer.step);
    let mut metrics = CsvLog::open(&out_dir.join(AE_METRICS), &LossBreakdown::CSV_HEADER, resumed)?;
    let mut epochs_log = CsvLog::open(&out_dir.join(AE_EPOCHS), &["epoch", "step", "eval_mse", "eval_psnr"], resume.map(|_| trainer.epoch))?;
    if resume.is_none() {
        epochs_log.row(&["0".into(), "0".into(), format!("{:e}", initial.mse), format_psnr(initial.psnr)])?;
        epochs_log.flush()?;
    }
    let mut per_epoch = Vec::new();
    let latest = out_dir.join(AE_LATEST);
    while (trainer.epoch as usize) < trainer.config.epochs {
        trainer.run_epoch(data, |step, l| metrics.row(&l.csv_row(step)))?;
        metrics.flush()?;
        let eval = eval_reconstruction(&trainer.model, heldout)?;
        log::info!(
            "epoch {} step {}: held-out mse {:.5} psnr {:.2} dB",
            trainer.epoch,
            trainer.step,
            eval.mse,
            eval.psnr
        );
        epochs_log.row(&[trainer.epoch.to_string(), trainer.step.to_string(), format!("{:e}", eval.mse), format_psnr(eval.psnr)])?;
        epochs_log.flush()?;
        let ck = trainer.checkpoint(Some(eval));
        ck.save(&out_dir.join(epoch_checkpoint_name(trainer.epoch)))?;
        ck.save(&latest)?;
        per_epoch.push(eval);
    }
    Ok(AeTrainReport { initial, per_epoch, steps: trainer.step, aborted_steps: trainer.aborted, checkpoint: latest })
}
