use lrsim_data::{Episode, Geometry};
use lrsim_tensor::{Element, SeededRng, Tensor};

use crate::error::{CoreError, Result};

/// Flat pool of planar frames sharing one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    geometry: Geometry,
    data: Vec<f32>,
}

impl FrameSet {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        let n = geometry.frame_len();
        if n == 0 || data.len() % n != 0 {
            return Err(CoreError::Config(format!("{} values do not form whole {:?} frames", data.len(), geometry)));
        }
        Ok(FrameSet { geometry, data })
    }

    pub fn from_episodes(episodes: &[Episode]) -> Result<Self> {
        let geometry = episodes.first().map(|e| e.geometry).ok_or_else(|| CoreError::Config("no episodes".into()))?;
        let mut data = Vec::new();
        for ep in episodes {
            if ep.geometry != geometry {
                return Err(CoreError::Config(format!("episode geometry {:?} differs from {:?}", ep.geometry, geometry)));
            }
            data.extend_from_slice(&ep.frames);
        }
        Self::new(geometry, data)
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.geometry.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.geometry.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Stacks the given frames into an `[N, 3, H, W]` tensor.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> Tensor<T> {
        let g = self.geometry;
        let mut out = Vec::with_capacity(indices.len() * g.frame_len());
        for &i in indices {
            out.extend(self.frame(i).iter().map(|&v| T::from_f32(v).expect("f32 converts")));
        }
        Tensor::from_vec(out, &[indices.len(), 3, g.height, g.width]).expect("batch shape")
    }

    /// Uniform draw with replacement.
    pub fn sample_indices(&self, rng: &mut SeededRng, batch: usize) -> Vec<usize> {
        (0..batch).map(|_| rng.next_below(self.len())).collect()
    }

    /// Every `stride`-th frame, for cheap probes.
    pub fn strided(&self, stride: usize) -> FrameSet {
        let stride = stride.max(1);
        let mut data = Vec::new();
        for i in (0..self.len()).step_by(stride) {
            data.extend_from_slice(self.frame(i));
        }
        FrameSet { geometry: self.geometry, data }
    }
}
