use std::path::Path;

use base64::Engine;
use lrsim_core::{checkpoint_controls, Rnn, VaeGan};
use lrsim_data::{planar_to_rgb, subsample_rate, ControlStats, Episode, Geometry};
use lrsim_nn::Checkpoint;
use lrsim_tensor::{SeededRng, Tensor};
use serde::{Deserialize, Serialize};

use crate::band::{default_band, NormBand};
use crate::error::{Result, SimError};

pub const DEFAULT_WARMUP: usize = 5;

/// Physical ranges actions are clamped to before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionLimits {
    pub steer_deg: [f64; 2],
    pub speed_mps: [f64; 2],
}

impl Default for ActionLimits {
    fn default() -> Self {
        ActionLimits { steer_deg: [-45.0, 45.0], speed_mps: [0.0, 40.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub steer_deg: f64,
    pub speed_mps: f64,
}

impl ActionCommand {
    pub fn new(steer_deg: f64, speed_mps: f64) -> Self {
        ActionCommand { steer_deg, speed_mps }
    }

    pub fn clamped(self, limits: &ActionLimits) -> Result<Self> {
        if !self.steer_deg.is_finite() || !self.speed_mps.is_finite() {
            return Err(SimError::Input(format!("action {self:?} is not finite")));
        }
        Ok(ActionCommand {
            steer_deg: self.steer_deg.clamp(limits.steer_deg[0], limits.steer_deg[1]),
            speed_mps: self.speed_mps.clamp(limits.speed_mps[0], limits.speed_mps[1]),
        })
    }
}

/// One decoded frame with its latent diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMessage {
    pub t: u64,
    pub width: usize,
    pub height: usize,
    /// Interleaved 8-bit RGB, row-major.
    pub rgb: Vec<u8>,
    pub latent_norm: f64,
    pub in_band: bool,
}

impl FrameMessage {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "type": "frame",
            "t": self.t,
            "width": self.width,
            "height": self.height,
            "rgb_b64": base64::engine::general_purpose::STANDARD.encode(&self.rgb),
            "latent_norm": self.latent_norm,
            "in_band": self.in_band,
        })
    }
}

/// How a session's initial state is produced.
#[derive(Debug, Clone, Copy)]
pub enum SessionSeed<'a> {
    /// Encode and teacher-force the first `warmup` frames (at least one).
    Episode { episode: &'a Episode, warmup: usize },
    /// Start from `h = 0` and a code drawn from the prior.
    Prior { rng_seed: u64 },
}

/// Trained networks shared read-only by every session.
#[derive(Debug, Clone)]
pub struct SimModel {
    ae: VaeGan<f32>,
    rnn: Rnn<f32>,
    controls: ControlStats,
    rate_hz: f64,
    band: NormBand,
    pub limits: ActionLimits,
}

impl SimModel {
    pub fn new(ae: VaeGan<f32>, rnn: Rnn<f32>, controls: ControlStats, rate_hz: f64) -> Result<Self> {
        let d = ae.latent_dim();
        if rnn.config().latent_dim != d {
            return Err(SimError::Config(format!(
                "autoencoder codes have {d} dimensions, transition model expects {}",
                rnn.config().latent_dim
            )));
        }
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(SimError::Config(format!("frame rate {rate_hz} must be positive")));
        }
        Ok(SimModel { ae, rnn, controls, rate_hz, band: default_band(d), limits: ActionLimits::default() })
    }

    pub fn from_checkpoints(ae: &Checkpoint, rnn: &Checkpoint) -> Result<Self> {
        let rate = rnn
            .meta
            .extra
            .get("rate_hz")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| SimError::Config("transition checkpoint lacks `rate_hz`".into()))?;
        SimModel::new(VaeGan::from_checkpoint(ae)?, Rnn::from_checkpoint(rnn)?, checkpoint_controls(rnn)?, rate)
    }

    pub fn load(ae_path: &Path, rnn_path: &Path) -> Result<Self> {
        SimModel::from_checkpoints(&Checkpoint::load(ae_path)?, &Checkpoint::load(rnn_path)?)
    }

    pub fn geometry(&self) -> Geometry {
        self.ae.arch().geometry
    }

    pub fn latent_dim(&self) -> usize {
        self.ae.latent_dim()
    }

    pub fn band(&self) -> NormBand {
        self.band
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn autoencoder(&self) -> &VaeGan<f32> {
        &self.ae
    }

    pub fn transition(&self) -> &Rnn<f32> {
        &self.rnn
    }

    fn control_tensor(&self, raw: [f32; 2]) -> Result<Tensor<f32>> {
        Ok(Tensor::from_vec(self.controls.normalize(raw).to_vec(), &[1, 2])?)
    }

    /// Builds a primed session.
    pub fn new_session(&self, seed: SessionSeed<'_>) -> Result<Session> {
        let d = self.latent_dim();
        let mut h = self.rnn.initial_state(1);
        match seed {
            SessionSeed::Prior { rng_seed } => {
                let z = SeededRng::new(rng_seed).gaussian(&[1, d]);
                Ok(Session { h, z, t: 0, failed: false, warmup_codes: Vec::new() })
            }
            SessionSeed::Episode { episode, warmup } => {
                if warmup == 0 {
                    return Err(SimError::Input("an episode seed needs at least one warm-up frame".into()));
                }
                if episode.geometry != self.geometry() {
                    return Err(SimError::Config(format!(
                        "episode frames are {}x{}, the model expects {}x{}",
                        episode.geometry.height,
                        episode.geometry.width,
                        self.geometry().height,
                        self.geometry().width
                    )));
                }
                let owned;
                let episode = if (episode.rate_hz - self.rate_hz).abs() > 1e-9 {
                    owned = subsample_rate(episode, self.rate_hz)?;
                    &owned
                } else {
                    episode
                };
                if episode.len() < warmup {
                    return Err(SimError::Input(format!(
                        "episode has {} frames at {} Hz, warm-up needs {warmup}",
                        episode.len(),
                        self.rate_hz
                    )));
                }
                let controls = episode.synced_controls()?;
                let g = self.geometry();
                let mut frames = Vec::with_capacity(warmup * g.frame_len());
                for t in 0..warmup {
                    frames.extend_from_slice(episode.frame(t));
                }
                let x = Tensor::from_vec(frames, &[warmup, 3, g.height, g.width])?;
                let codes = self.ae.encode(&x)?.mu;
                let row = |t: usize| -> Result<Tensor<f32>> {
                    Ok(Tensor::from_vec(codes.data()[t * d..(t + 1) * d].to_vec(), &[1, d])?)
                };
                for (t, c) in controls.iter().enumerate().take(warmup - 1) {
                    let (_, h_next) = self.rnn.step(&row(t)?, &h, &self.control_tensor(*c)?)?;
                    h = h_next;
                }
                let warmup_codes = (0..warmup).map(|t| l2(&codes.data()[t * d..(t + 1) * d])).collect();
                Ok(Session { h, z: row(warmup - 1)?, t: warmup as u64, failed: false, warmup_codes })
            }
        }
    }

    /// Advances a session by one transition under `action` and decodes the
    /// predicted code.
    pub fn step(&self, session: &mut Session, action: ActionCommand) -> Result<FrameMessage> {
        if session.failed {
            return Err(SimError::SessionFailed);
        }
        let a = action.clamped(&self.limits)?;
        let c = self.control_tensor([a.speed_mps as f32, a.steer_deg as f32])?;
        let (z, h) = self.rnn.step(&session.z, &session.h, &c)?;
        if !z.all_finite() || !h.all_finite() {
            session.failed = true;
            return Err(SimError::NonFinite(format!("predicted code at t = {}", session.t + 1)));
        }
        let frame = self.ae.decode(&z)?;
        let g = self.geometry();
        let latent_norm = l2(z.data());
        session.z = z;
        session.h = h;
        session.t += 1;
        Ok(FrameMessage {
            t: session.t,
            width: g.width,
            height: g.height,
            rgb: planar_to_rgb(frame.data(), g.height, g.width),
            latent_norm,
            in_band: self.band.contains(latent_norm),
        })
    }

    /// Decodes a code without touching any session.
    pub fn decode_rgb(&self, z: &[f32]) -> Result<Vec<u8>> {
        let g = self.geometry();
        let frame = self.ae.decode(&Tensor::from_vec(z.to_vec(), &[1, self.latent_dim()])?)?;
        Ok(planar_to_rgb(frame.data(), g.height, g.width))
    }
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Recurrent state of one simulation.
#[derive(Debug, Clone)]
pub struct Session {
    h: Tensor<f32>,
    z: Tensor<f32>,
    t: u64,
    failed: bool,
    warmup_codes: Vec<f64>,
}

impl Session {
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn hidden(&self) -> &[f32] {
        self.h.data()
    }

    pub fn code(&self) -> &[f32] {
        self.z.data()
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    /// Norms of the encoded warm-up codes.
    pub fn warmup_norms(&self) -> &[f64] {
        &self.warmup_codes
    }
}
