use std::path::Path;

use lrsim_nn::{Container, NamedArray};
use serde_json::json;

use crate::episode::{f32s, f64s, EPISODE_MAGIC};
use crate::error::{DataError, Result};

/// Encoded episode: one latent code per frame plus raw controls synced to
/// the frame times.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSequence {
    pub dim: usize,
    /// `[T, D]`.
    pub codes: Vec<f32>,
    pub frame_ts: Vec<f64>,
    /// `[speed_mps, steer_deg]` per frame.
    pub controls: Vec<[f32; 2]>,
    pub rate_hz: f64,
}

impl CodeSequence {
    pub fn len(&self) -> usize {
        self.frame_ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ts.is_empty()
    }

    pub fn code(&self, t: usize) -> &[f32] {
        &self.codes[t * self.dim..(t + 1) * self.dim]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let t = self.len();
        if self.codes.len() != t * self.dim || self.controls.len() != t {
            return Err(DataError::Shape("code sequence arrays disagree on length".into()));
        }
        let c = Container {
            arrays: vec![
                NamedArray::f32("codes", &[t, self.dim], self.codes.clone()),
                NamedArray::f64("frame_ts", &[t], self.frame_ts.clone()),
                NamedArray::f64("speed_ts", &[t], self.frame_ts.clone()),
                NamedArray::f32("speed", &[t], self.controls.iter().map(|c| c[0]).collect()),
                NamedArray::f64("steer_ts", &[t], self.frame_ts.clone()),
                NamedArray::f32("steer", &[t], self.controls.iter().map(|c| c[1]).collect()),
            ],
            metadata: json!({ "rate_hz": self.rate_hz, "frames": t, "latent_dim": self.dim }),
        };
        Ok(c.save(path, EPISODE_MAGIC)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path, EPISODE_MAGIC)?;
        let codes = c.require("codes")?;
        let [t, dim] = codes.shape[..] else {
            return Err(DataError::Shape(format!("codes must be [T, D], got {:?}", codes.shape)));
        };
        let speed = f32s(&c, "speed")?;
        let steer = f32s(&c, "steer")?;
        let frame_ts = f64s(&c, "frame_ts")?;
        if speed.len() != t || steer.len() != t || frame_ts.len() != t {
            return Err(DataError::Shape("controls do not match code count".into()));
        }
        let rate_hz = c.metadata.get("rate_hz").and_then(|v| v.as_f64()).unwrap_or(0.0);
        Ok(CodeSequence {
            dim,
            codes: f32s(&c, "codes")?,
            frame_ts,
            controls: speed.into_iter().zip(steer).map(|(s, a)| [s, a]).collect(),
            rate_hz,
        })
    }
}
