use lrsim_tensor::no_grad;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::frames::FrameSet;
use crate::vaegan::VaeGan;

const EVAL_CHUNK: usize = 64;

/// Band a code dimension must fall in to count as roughly standard normal.
pub const GAUSSIAN_MEAN_LIMIT: f64 = 0.5;
pub const GAUSSIAN_STD_RANGE: (f64, f64) = (0.3, 3.0);

/// Distribution of eval-mode codes over a frame set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub samples: usize,
    /// Mean per-frame KL divergence of the posterior from N(0, I).
    pub kl: f64,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub norm_min: f64,
    pub norm_max: f64,
    pub dim_mean: Vec<f64>,
    pub dim_std: Vec<f64>,
}

impl LatentStats {
    pub fn from_posterior(mu: &[f32], log_var: &[f32], dim: usize) -> Result<Self> {
        if dim == 0 || mu.len() != log_var.len() || mu.len() % dim != 0 || mu.len() < 2 * dim {
            return Err(CoreError::Config(format!("need at least two {dim}-d codes with matching variances")));
        }
        let n = mu.len() / dim;
        let kl = mu
            .iter()
            .zip(log_var)
            .map(|(&m, &lv)| {
                let (m, lv) = (m as f64, lv as f64);
                0.5 * (m * m + lv.exp() - 1.0 - lv)
            })
            .sum::<f64>()
            / n as f64;
        let norms: Vec<f64> = mu.chunks(dim).map(|z| z.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()).collect();
        let (norm_mean, norm_std) = mean_std(norms.iter().copied());
        let mut dim_mean = Vec::with_capacity(dim);
        let mut dim_std = Vec::with_capacity(dim);
        for j in 0..dim {
            let (m, s) = mean_std(mu.iter().skip(j).step_by(dim).map(|&v| v as f64));
            dim_mean.push(m);
            dim_std.push(s);
        }
        Ok(LatentStats {
            samples: n,
            kl,
            norm_mean,
            norm_std,
            norm_min: norms.iter().copied().fold(f64::INFINITY, f64::min),
            norm_max: norms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            dim_mean,
            dim_std,
        })
    }

    /// Dimensions with |mean| below the limit and std inside the range.
    pub fn gaussian_dims(&self) -> usize {
        let (lo, hi) = GAUSSIAN_STD_RANGE;
        self.dim_mean
            .iter()
            .zip(&self.dim_std)
            .filter(|&(&m, &s)| m.abs() < GAUSSIAN_MEAN_LIMIT && s > lo && s < hi)
            .count()
    }

    pub fn gaussian_fraction(&self) -> f64 {
        self.gaussian_dims() as f64 / self.dim_mean.len() as f64
    }

    /// Mean code norm over the value `sqrt(D)` expected under N(0, I).
    pub fn norm_ratio(&self) -> f64 {
        self.norm_mean / (self.dim_mean.len() as f64).sqrt()
    }
}

/// Sample mean and standard deviation (n - 1 denominator).
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn latent_stats(model: &VaeGan<f32>, frames: &FrameSet) -> Result<LatentStats> {
    let n = frames.len();
    let mut mu = Vec::with_capacity(n * model.latent_dim());
    let mut log_var = Vec::with_capacity(n * model.latent_dim());
    no_grad(|| -> Result<()> {
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let enc = model.encode(&frames.batch::<f32>(&idx))?;
            mu.extend_from_slice(enc.mu.data());
            log_var.extend_from_slice(enc.log_var.data());
        }
        Ok(())
    })?;
    LatentStats::from_posterior(&mu, &log_var, model.latent_dim())
}
