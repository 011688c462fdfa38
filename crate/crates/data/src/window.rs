use lrsim_tensor::SeededRng;
use serde::{Deserialize, Serialize};

use crate::episode::Episode;
use crate::error::Result;

/// Default window length: 5 teacher-forced plus 10 free-running steps.
pub const DEFAULT_WINDOW: usize = 15;

/// Global mean and standard deviation of speed and steering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlStats {
    pub speed_mean: f64,
    pub speed_std: f64,
    pub steer_mean: f64,
    pub steer_std: f64,
}

impl Default for ControlStats {
    fn default() -> Self {
        ControlStats { speed_mean: 0.0, speed_std: 1.0, steer_mean: 0.0, steer_std: 1.0 }
    }
}

impl ControlStats {
    /// Population statistics over all rows; a constant channel gets std 1.
    pub fn from_controls<'a>(rows: impl IntoIterator<Item = &'a [f32; 2]>) -> Self {
        let mut n = 0.0;
        let (mut s, mut ss) = ([0.0f64; 2], [0.0f64; 2]);
        for r in rows {
            n += 1.0;
            for k in 0..2 {
                let v = f64::from(r[k]);
                s[k] += v;
                ss[k] += v * v;
            }
        }
        if n == 0.0 {
            return Self::default();
        }
        let stat = |k: usize| {
            let mean = s[k] / n;
            let var = (ss[k] / n - mean * mean).max(0.0);
            let std = var.sqrt();
            (mean, if std > 1e-6 { std } else { 1.0 })
        };
        let ((speed_mean, speed_std), (steer_mean, steer_std)) = (stat(0), stat(1));
        ControlStats { speed_mean, speed_std, steer_mean, steer_std }
    }

    pub fn from_episodes(eps: &[Episode]) -> Result<Self> {
        let mut rows = Vec::new();
        for ep in eps {
            rows.extend(ep.synced_controls()?);
        }
        Ok(Self::from_controls(&rows))
    }

    /// `[speed_mps, steer_deg] -> normalized control`.
    pub fn normalize(&self, raw: [f32; 2]) -> [f32; 2] {
        [
            ((f64::from(raw[0]) - self.speed_mean) / self.speed_std) as f32,
            ((f64::from(raw[1]) - self.steer_mean) / self.steer_std) as f32,
        ]
    }
}

/// Draws window starts uniformly over every valid `(sequence, start)` pair,
/// where starts are multiples of `stride` and windows end before the sequence does.
#[derive(Debug, Clone)]
pub struct WindowSampler {
    n: usize,
    /// Cumulative count of valid starts per sequence.
    cumulative: Vec<usize>,
    stride: usize,
}

impl WindowSampler {
    pub fn new(lengths: &[usize], n: usize, stride: usize) -> Self {
        let stride = stride.max(1);
        let mut cumulative = Vec::with_capacity(lengths.len());
        let mut total = 0;
        for &len in lengths {
            if len >= n && n > 0 {
                total += (len - n) / stride + 1;
            }
            cumulative.push(total);
        }
        if total == 0 {
            log::warn!("no sequence holds a window of {n} steps; the window stream is empty");
        }
        WindowSampler { n, cumulative, stride }
    }

    pub fn window_len(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.cumulative.last().copied().unwrap_or(0)
    }

    /// Window number `k` in `0..count()` as `(sequence, start)`.
    pub fn nth(&self, k: usize) -> Option<(usize, usize)> {
        if k >= self.count() {
            return None;
        }
        let seq = self.cumulative.partition_point(|&c| c <= k);
        let before = if seq == 0 { 0 } else { self.cumulative[seq - 1] };
        Some((seq, (k - before) * self.stride))
    }

    pub fn draw(&self, rng: &mut SeededRng) -> Option<(usize, usize)> {
        let total = self.count();
        (total > 0).then(|| self.nth(rng.next_below(total)).expect("index in range"))
    }
}

/// A window of `n` consecutive frames with their normalized controls.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub start: usize,
    /// `[n, 3, H, W]`.
    pub frames: Vec<f32>,
    pub controls: Vec<[f32; 2]>,
}

/// Endless stream of random windows from one episode; empty (with a warning)
/// when the episode is shorter than `n`.
pub struct WindowStream<'a> {
    ep: &'a Episode,
    controls: Vec<[f32; 2]>,
    sampler: WindowSampler,
    rng: SeededRng,
}

pub fn window_batches<'a>(
    ep: &'a Episode,
    n: usize,
    stride: usize,
    stats: &ControlStats,
    rng: SeededRng,
) -> Result<WindowStream<'a>> {
    let controls = ep.synced_controls()?.into_iter().map(|c| stats.normalize(c)).collect();
    Ok(WindowStream { ep, controls, sampler: WindowSampler::new(&[ep.len()], n, stride), rng })
}

impl Iterator for WindowStream<'_> {
    type Item = WindowBatch;

    fn next(&mut self) -> Option<WindowBatch> {
        let (_, start) = self.sampler.draw(&mut self.rng)?;
        let n = self.sampler.window_len();
        let len = self.ep.geometry.frame_len();
        Some(WindowBatch {
            start,
            frames: self.ep.frames[start * len..(start + n) * len].to_vec(),
            controls: self.controls[start..start + n].to_vec(),
        })
    }
}
