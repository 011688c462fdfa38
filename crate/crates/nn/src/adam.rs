use std::collections::HashMap;

use lrsim_tensor::{Element, Gradients, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layer::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepReport {
    pub updated: usize,
    /// Parameters whose gradient was identically zero or absent.
    pub untouched: usize,
    /// Parameters skipped because their gradient held NaN or infinity.
    pub skipped_non_finite: usize,
}

/// Adam with bias correction. A parameter with a non-finite gradient is left
/// untouched and counted; one whose gradient is entirely zero keeps both its
/// value and its moments.
#[derive(Debug, Clone)]
pub struct Adam<T: Element = f32> {
    config: AdamConfig,
    t: u64,
    moments: HashMap<String, Moments<T>>,
    skip_events: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam { config, t: 0, moments: HashMap::new(), skip_events: 0 })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn skip_events(&self) -> u64 {
        self.skip_events
    }

    pub fn step(&mut self, params: Vec<&mut Param<T>>, grads: &Gradients<T>) -> StepReport {
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (lr, eps) = (T::from_f64_lossy(c.lr), T::from_f64_lossy(c.eps));
        let (bc1, bc2) = (T::from_f64_lossy(bc1), T::from_f64_lossy(bc2));
        let mut report = StepReport::default();
        for p in params {
            let Some(g) = grads.get(&p.value) else {
                report.untouched += 1;
                continue;
            };
            if g.iter().any(|v| !v.is_finite()) {
                report.skipped_non_finite += 1;
                self.skip_events += 1;
                log::warn!("non-finite gradient for `{}`, update skipped", p.name);
                continue;
            }
            if g.iter().all(|v| v.is_zero()) {
                report.untouched += 1;
                continue;
            }
            let n = g.len();
            let mo = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| Moments { m: vec![T::zero(); n], v: vec![T::zero(); n] });
            let mut data = p.value.to_vec();
            for i in 0..n {
                mo.m[i] = b1 * mo.m[i] + (T::one() - b1) * g[i];
                mo.v[i] = b2 * mo.v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = mo.m[i] / bc1;
                let v_hat = mo.v[i] / bc2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.set(data);
            report.updated += 1;
        }
        report
    }

    /// Moment buffers as named tensors `<prefix>.m.<param>` / `<prefix>.v.<param>`.
    pub fn state(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut names: Vec<_> = self.moments.keys().collect();
        names.sort();
        let mut out = Vec::new();
        for name in names {
            let mo = &self.moments[name];
            let n = mo.m.len();
            out.push((format!("{prefix}.m.{name}"), Tensor::from_vec(mo.m.clone(), &[n]).expect("1-d")));
            out.push((format!("{prefix}.v.{name}"), Tensor::from_vec(mo.v.clone(), &[n]).expect("1-d")));
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, step: u64, state: &HashMap<String, Tensor<T>>) -> Result<()> {
        let m_prefix = format!("{prefix}.m.");
        let mut moments = HashMap::new();
        for (key, m) in state {
            let Some(name) = key.strip_prefix(&m_prefix) else { continue };
            let v_key = format!("{prefix}.v.{name}");
            let v = state.get(&v_key).ok_or(NnError::Missing(v_key))?;
            if v.numel() != m.numel() {
                return Err(NnError::Config(format!("moment size mismatch for `{name}`")));
            }
            moments.insert(name.to_string(), Moments { m: m.to_vec(), v: v.to_vec() });
        }
        self.moments = moments;
        self.t = step;
        Ok(())
    }
}
