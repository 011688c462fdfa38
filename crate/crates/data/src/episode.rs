use std::path::Path;

use lrsim_nn::{ArrayData, Container, NamedArray};
use serde_json::json;

use crate::error::{DataError, Result};
use crate::resample::resample_linear;

pub const EPISODE_MAGIC: [u8; 4] = *b"CDRV";

/// Frame height and width after preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub const DESK: Geometry = Geometry { height: 32, width: 64 };
    pub const PAPER: Geometry = Geometry { height: 80, width: 160 };

    pub fn frame_len(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [3, self.height, self.width]
    }
}

/// Generator state sampled at each frame time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    /// Distance travelled along the road, metres.
    pub odometer: Vec<f64>,
    /// Lateral offset from the road centre, metres, positive to the right.
    pub lateral: Vec<f64>,
    /// Heading relative to the road tangent, radians, positive to the right.
    pub heading: Vec<f64>,
    pub curvature: Vec<f64>,
    /// Gap to the leading car, metres; NaN when there is none.
    pub lead_gap: Vec<f64>,
    /// Dash pattern phase in cycles (fractional part is the visible phase).
    pub dash_phase: Vec<f64>,
}

const TRUTH_FIELDS: [&str; 6] = ["odometer", "lateral", "heading", "curvature", "lead_gap", "dash_phase"];

impl GroundTruth {
    fn columns(&self) -> [&Vec<f64>; 6] {
        [&self.odometer, &self.lateral, &self.heading, &self.curvature, &self.lead_gap, &self.dash_phase]
    }

    fn columns_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.odometer,
            &mut self.lateral,
            &mut self.heading,
            &mut self.curvature,
            &mut self.lead_gap,
            &mut self.dash_phase,
        ]
    }
}

/// A recording: planar frames in [-1, 1] plus speed and steering series
/// with their own timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub geometry: Geometry,
    /// `[T, 3, H, W]`, row-major.
    pub frames: Vec<f32>,
    pub frame_ts: Vec<f64>,
    pub speed_ts: Vec<f64>,
    /// Metres per second.
    pub speed: Vec<f32>,
    pub steer_ts: Vec<f64>,
    /// Steering wheel angle, degrees, positive to the right.
    pub steer: Vec<f32>,
    pub rate_hz: f64,
    pub truth: Option<GroundTruth>,
}

fn strictly_increasing(name: &str, ts: &[f64]) -> Result<()> {
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DataError::Contract(format!("{name} timestamps must be strictly increasing")));
    }
    Ok(())
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frame_ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ts.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.geometry.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.geometry.frame_len();
        if n == 0 {
            return Err(DataError::Config("zero image extent".into()));
        }
        if self.frames.len() != self.len() * n {
            return Err(DataError::Shape(format!(
                "{} frame values for {} frames of {:?}",
                self.frames.len(),
                self.len(),
                self.geometry
            )));
        }
        if self.frames.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(DataError::Contract("pixel outside [-1, 1]".into()));
        }
        if self.speed.len() != self.speed_ts.len() || self.steer.len() != self.steer_ts.len() {
            return Err(DataError::Shape("sensor series and timestamps differ in length".into()));
        }
        if self.speed_ts.len() < 2 || self.steer_ts.len() < 2 {
            return Err(DataError::Shape("sensor series need at least two samples".into()));
        }
        strictly_increasing("frame", &self.frame_ts)?;
        strictly_increasing("speed", &self.speed_ts)?;
        strictly_increasing("steering", &self.steer_ts)?;
        if !(self.rate_hz > 0.0) {
            return Err(DataError::Config(format!("rate {} Hz", self.rate_hz)));
        }
        Ok(())
    }

    /// Speed and steering interpolated at the frame timestamps.
    pub fn synced_controls(&self) -> Result<Vec<[f32; 2]>> {
        let f = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
        let speed = resample_linear(&self.speed_ts, &f(&self.speed), &self.frame_ts)?;
        let steer = resample_linear(&self.steer_ts, &f(&self.steer), &self.frame_ts)?;
        Ok(speed.into_iter().zip(steer).map(|(s, a)| [s as f32, a as f32]).collect())
    }

    pub fn to_container(&self) -> Result<Container> {
        self.validate()?;
        let g = self.geometry;
        let t = self.len();
        let mut arrays = vec![
            NamedArray::f32("frames", &[t, 3, g.height, g.width], self.frames.clone()),
            NamedArray::f64("frame_ts", &[t], self.frame_ts.clone()),
            NamedArray::f64("speed_ts", &[self.speed_ts.len()], self.speed_ts.clone()),
            NamedArray::f32("speed", &[self.speed.len()], self.speed.clone()),
            NamedArray::f64("steer_ts", &[self.steer_ts.len()], self.steer_ts.clone()),
            NamedArray::f32("steer", &[self.steer.len()], self.steer.clone()),
        ];
        if let Some(truth) = &self.truth {
            for (name, col) in TRUTH_FIELDS.iter().zip(truth.columns()) {
                arrays.push(NamedArray::f64(format!("truth.{name}"), &[col.len()], col.clone()));
            }
        }
        Ok(Container { arrays, metadata: json!({ "rate_hz": self.rate_hz, "frames": t, "height": g.height, "width": g.width }) })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let frames = c.require("frames")?;
        let [t, ch, h, w] = frames.shape[..] else {
            return Err(DataError::Shape(format!("frames must be [T, 3, H, W], got {:?}", frames.shape)));
        };
        if ch != 3 {
            return Err(DataError::Shape(format!("frames need 3 channels, got {ch}")));
        }
        let rate_hz = c
            .metadata
            .get("rate_hz")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| DataError::Input("episode metadata lacks rate_hz".into()))?;
        let truth = if c.get("truth.odometer").is_some() {
            let mut truth = GroundTruth::default();
            for (name, col) in TRUTH_FIELDS.iter().zip(truth.columns_mut()) {
                *col = f64s(c, &format!("truth.{name}"))?;
            }
            Some(truth)
        } else {
            None
        };
        let ep = Episode {
            geometry: Geometry { height: h, width: w },
            frames: f32s(c, "frames")?,
            frame_ts: f64s(c, "frame_ts")?,
            speed_ts: f64s(c, "speed_ts")?,
            speed: f32s(c, "speed")?,
            steer_ts: f64s(c, "steer_ts")?,
            steer: f32s(c, "steer")?,
            rate_hz,
            truth,
        };
        if ep.len() != t {
            return Err(DataError::Shape("frame_ts length differs from frame count".into()));
        }
        ep.validate()?;
        Ok(ep)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_container()?.save(path, EPISODE_MAGIC)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, EPISODE_MAGIC)?)
    }
}

pub(crate) fn f32s(c: &Container, name: &str) -> Result<Vec<f32>> {
    match &c.require(name)?.data {
        ArrayData::F32(v) => Ok(v.clone()),
        ArrayData::F64(_) => Err(DataError::Input(format!("`{name}` must be f32"))),
    }
}

pub(crate) fn f64s(c: &Container, name: &str) -> Result<Vec<f64>> {
    match &c.require(name)?.data {
        ArrayData::F64(v) => Ok(v.clone()),
        ArrayData::F32(_) => Err(DataError::Input(format!("`{name}` must be f64"))),
    }
}

/// Keeps every `rate_hz / dst_hz`-th frame. Sensor series are left intact,
/// so syncing at the kept frame times reproduces the original synced values.
pub fn subsample_rate(ep: &Episode, dst_hz: f64) -> Result<Episode> {
    if !(dst_hz > 0.0) || dst_hz > ep.rate_hz {
        return Err(DataError::Config(format!("cannot resample {} Hz to {dst_hz} Hz", ep.rate_hz)));
    }
    let ratio = ep.rate_hz / dst_hz;
    let stride = ratio.round();
    if (ratio - stride).abs() > 1e-9 * ratio {
        return Err(DataError::Config(format!("{} Hz to {dst_hz} Hz is not an integer stride", ep.rate_hz)));
    }
    let stride = stride as usize;
    let keep: Vec<usize> = (0..ep.len()).step_by(stride).collect();
    let n = ep.geometry.frame_len();
    let mut frames = Vec::with_capacity(keep.len() * n);
    for &t in &keep {
        frames.extend_from_slice(ep.frame(t));
    }
    let pick = |v: &[f64]| keep.iter().map(|&t| v[t]).collect::<Vec<_>>();
    let truth = ep.truth.as_ref().map(|tr| {
        let mut out = GroundTruth::default();
        for (dst, src) in out.columns_mut().into_iter().zip(tr.columns()) {
            *dst = pick(src);
        }
        out
    });
    Ok(Episode {
        geometry: ep.geometry,
        frames,
        frame_ts: pick(&ep.frame_ts),
        speed_ts: ep.speed_ts.clone(),
        speed: ep.speed.clone(),
        steer_ts: ep.steer_ts.clone(),
        steer: ep.steer.clone(),
        rate_hz: dst_hz,
        truth,
    })
}
