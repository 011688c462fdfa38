use std::collections::HashMap;

use lrsim_nn::{Checkpoint, Param};
use lrsim_tensor::{Element, SeededRng, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const CONTROL_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    #[serde(default = "control_dim")]
    pub controls: usize,
    /// Adds a hidden and a readout bias; off by default.
    #[serde(default)]
    pub bias: bool,
}

fn control_dim() -> usize {
    CONTROL_DIM
}

impl RnnConfig {
    pub fn new(latent_dim: usize, hidden: usize) -> Self {
        RnnConfig { latent_dim, hidden, controls: CONTROL_DIM, bias: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 || self.controls == 0 {
            return Err(CoreError::Config(format!("degenerate transition model {self:?}")));
        }
        Ok(())
    }
}

/// Vanilla recurrent cell over latent codes:
/// `h' = tanh(W h + V z + U c)`, `z' = A h'`.
#[derive(Debug, Clone)]
pub struct Rnn<T: Element = f32> {
    config: RnnConfig,
    /// `W`, `[H, H]`.
    pub recurrent: Param<T>,
    /// `V`, `[H, D]`.
    pub input: Param<T>,
    /// `U`, `[H, C]`.
    pub control: Param<T>,
    /// `A`, `[D, H]`.
    pub readout: Param<T>,
    pub hidden_bias: Option<Param<T>>,
    pub readout_bias: Option<Param<T>>,
}

/// Transposed weights shared by every step of an unroll.
struct StepWeights<T: Element> {
    recurrent_t: Tensor<T>,
    input_t: Tensor<T>,
    control_t: Tensor<T>,
    readout_t: Tensor<T>,
    hidden_bias: Option<Tensor<T>>,
    readout_bias: Option<Tensor<T>>,
}

impl<T: Element> Rnn<T> {
    /// Weights drawn from `N(0, 1 / fan_in)`, biases zero.
    pub fn new(config: RnnConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let (h, d, c) = (config.hidden, config.latent_dim, config.controls);
        let mut draw = |name: &str, rows: usize, cols: usize| {
            let std = 1.0 / (cols as f64).sqrt();
            Param::new(name, Tensor::from_vec(rng.gaussian_vec(rows * cols, 0.0, std), &[rows, cols]).expect("shape"))
        };
        let recurrent = draw("rnn.recurrent", h, h);
        let input = draw("rnn.input", h, d);
        let control = draw("rnn.control", h, c);
        let readout = draw("rnn.readout", d, h);
        Ok(Self::assemble(config, recurrent, input, control, readout))
    }

    /// All-zero weights.
    pub fn zeros(config: RnnConfig) -> Result<Self> {
        config.validate()?;
        let (h, d, c) = (config.hidden, config.latent_dim, config.controls);
        let z = |name: &str, rows: usize, cols: usize| Param::new(name, Tensor::zeros(&[rows, cols]));
        Ok(Self::assemble(config, z("rnn.recurrent", h, h), z("rnn.input", h, d), z("rnn.control", h, c), z("rnn.readout", d, h)))
    }

    /// Builds a cell from explicit `W, V, U, A` matrices.
    pub fn from_matrices(config: RnnConfig, w: Tensor<T>, v: Tensor<T>, u: Tensor<T>, a: Tensor<T>) -> Result<Self> {
        config.validate()?;
        let (h, d, c) = (config.hidden, config.latent_dim, config.controls);
        for (t, shape) in [(&w, [h, h]), (&v, [h, d]), (&u, [h, c]), (&a, [d, h])] {
            if t.shape() != shape {
                return Err(CoreError::Config(format!("matrix {:?} should be {shape:?}", t.shape())));
            }
        }
        Ok(Self::assemble(
            config,
            Param::new("rnn.recurrent", w),
            Param::new("rnn.input", v),
            Param::new("rnn.control", u),
            Param::new("rnn.readout", a),
        ))
    }

    fn assemble(config: RnnConfig, recurrent: Param<T>, input: Param<T>, control: Param<T>, readout: Param<T>) -> Self {
        let (hidden_bias, readout_bias) = if config.bias {
            (
                Some(Param::new("rnn.hidden_bias", Tensor::zeros(&[1, config.hidden]))),
                Some(Param::new("rnn.readout_bias", Tensor::zeros(&[1, config.latent_dim]))),
            )
        } else {
            (None, None)
        };
        Rnn { config, recurrent, input, control, readout, hidden_bias, readout_bias }
    }

    pub fn config(&self) -> &RnnConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = vec![&self.recurrent, &self.input, &self.control, &self.readout];
        out.extend(self.hidden_bias.as_ref());
        out.extend(self.readout_bias.as_ref());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = vec![&mut self.recurrent, &mut self.input, &mut self.control, &mut self.readout];
        out.extend(self.hidden_bias.as_mut());
        out.extend(self.readout_bias.as_mut());
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.all_finite())
    }

    fn weights(&self) -> Result<StepWeights<T>> {
        Ok(StepWeights {
            recurrent_t: self.recurrent.value.t()?,
            input_t: self.input.value.t()?,
            control_t: self.control.value.t()?,
            readout_t: self.readout.value.t()?,
            hidden_bias: self.hidden_bias.as_ref().map(|p| p.value.clone()),
            readout_bias: self.readout_bias.as_ref().map(|p| p.value.clone()),
        })
    }

    fn check(&self, z: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>) -> Result<()> {
        let b = z.shape().first().copied().unwrap_or(0);
        let cfg = &self.config;
        let ok = z.shape() == [b, cfg.latent_dim] && h.shape() == [b, cfg.hidden] && c.shape() == [b, cfg.controls];
        if !ok {
            return Err(CoreError::Tensor(lrsim_tensor::TensorError::Shape(format!(
                "step expects z [B, {}], h [B, {}], c [B, {}]; got {:?}, {:?}, {:?}",
                cfg.latent_dim,
                cfg.hidden,
                cfg.controls,
                z.shape(),
                h.shape(),
                c.shape()
            ))));
        }
        Ok(())
    }

    fn step_with(&self, w: &StepWeights<T>, z: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check(z, h, c)?;
        let mut pre = h.matmul(&w.recurrent_t)?.add(&z.matmul(&w.input_t)?)?.add(&c.matmul(&w.control_t)?)?;
        if let Some(b) = &w.hidden_bias {
            pre = pre.add(b)?;
        }
        let h_next = pre.tanh();
        let mut z_pred = h_next.matmul(&w.readout_t)?;
        if let Some(b) = &w.readout_bias {
            z_pred = z_pred.add(b)?;
        }
        Ok((z_pred, h_next))
    }

    /// One transition: returns `(z_pred, h_next)`.
    pub fn step(&self, z: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.step_with(&self.weights()?, z, h, c)
    }

    pub fn initial_state(&self, batch: usize) -> Tensor<T> {
        Tensor::zeros(&[batch, self.config.hidden])
    }

    /// Runs a sequence from `h = 0`. Inputs at positions `0..teacher_forced`
    /// are the recorded codes; later inputs are the previous predictions,
    /// detached. Every step consumes the recorded control.
    pub fn unroll(&self, batch: &SequenceBatch<T>, teacher_forced: usize) -> Result<Unrolled<T>> {
        let n = batch.len();
        if n < 2 {
            return Err(CoreError::Config("a sequence needs at least two steps".into()));
        }
        if teacher_forced == 0 || teacher_forced > n {
            return Err(CoreError::Config(format!("teacher forcing {teacher_forced} outside 1..={n}")));
        }
        let w = self.weights()?;
        let mut h = self.initial_state(batch.batch_size());
        let mut predictions = Vec::with_capacity(n - 1);
        let mut fed_back = Vec::new();
        for t in 0..n - 1 {
            let input = if t < teacher_forced {
                batch.codes[t].clone()
            } else {
                let fb = predictions.last().map(|p: &Tensor<T>| p.detach()).expect("prediction exists");
                fed_back.push(fb.clone());
                fb
            };
            let (z_pred, h_next) = self.step_with(&w, &input, &h, &batch.controls[t])?;
            predictions.push(z_pred);
            h = h_next;
        }
        Ok(Unrolled { predictions, fed_back, hidden: h })
    }

    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        self.params().iter().map(|p| (p.name.clone(), p.value.detach())).collect()
    }

    pub fn load_state(&mut self, state: &HashMap<String, Tensor<T>>) -> Result<()> {
        for p in self.params_mut() {
            let t = state.get(&p.name).ok_or_else(|| CoreError::Config(format!("missing tensor `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(CoreError::Config(format!("`{}` has shape {:?}, expected {:?}", p.name, t.shape(), p.value.shape())));
            }
            p.set(t.to_vec());
        }
        Ok(())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: RnnConfig = serde_json::from_value(
            ck.meta.extra.get("rnn").cloned().ok_or_else(|| CoreError::Config("checkpoint lacks `rnn`".into()))?,
        )
        .map_err(|e| CoreError::Config(format!("checkpoint `rnn`: {e}")))?;
        let mut rnn = Rnn::zeros(config)?;
        rnn.load_state(&ck.tensors_with_prefix("rnn.")?)?;
        Ok(rnn)
    }
}

/// Codes and controls for `n` consecutive steps, one `[B, *]` tensor per step.
#[derive(Debug, Clone)]
pub struct SequenceBatch<T: Element = f32> {
    pub codes: Vec<Tensor<T>>,
    pub controls: Vec<Tensor<T>>,
}

impl<T: Element> SequenceBatch<T> {
    /// Builds a batch from windows of `n` codes (`[n, D]` row-major) with
    /// their normalized controls.
    pub fn from_windows(windows: &[(&[f32], &[[f32; 2]])], latent_dim: usize) -> Result<Self> {
        let b = windows.len();
        let n = windows.first().map(|w| w.1.len()).ok_or_else(|| CoreError::Config("empty batch".into()))?;
        for (codes, controls) in windows {
            if codes.len() != n * latent_dim || controls.len() != n {
                return Err(CoreError::Config("windows differ in length or code size".into()));
            }
        }
        let conv = |v: f32| T::from_f32(v).expect("f32 converts");
        let mut codes = Vec::with_capacity(n);
        let mut controls = Vec::with_capacity(n);
        for t in 0..n {
            let mut zc = Vec::with_capacity(b * latent_dim);
            let mut cc = Vec::with_capacity(b * CONTROL_DIM);
            for (wz, wc) in windows {
                zc.extend(wz[t * latent_dim..(t + 1) * latent_dim].iter().map(|&v| conv(v)));
                cc.extend(wc[t].iter().map(|&v| conv(v)));
            }
            codes.push(Tensor::from_vec(zc, &[b, latent_dim])?);
            controls.push(Tensor::from_vec(cc, &[b, CONTROL_DIM])?);
        }
        Ok(SequenceBatch { codes, controls })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.codes.first().map_or(0, |t| t.dim(0))
    }
}

pub struct Unrolled<T: Element> {
    /// One-step predictions of codes `1..n`.
    pub predictions: Vec<Tensor<T>>,
    /// Detached predictions that were fed back as inputs.
    pub fed_back: Vec<Tensor<T>>,
    /// Hidden state after the last step.
    pub hidden: Tensor<T>,
}

/// Mean squared error over batch, time and code dimensions.
pub fn rnn_loss<T: Element>(predictions: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<Tensor<T>> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(CoreError::Config(format!("{} predictions for {} targets", predictions.len(), targets.len())));
    }
    let mut total: Option<Tensor<T>> = None;
    let mut count = 0usize;
    for (p, t) in predictions.iter().zip(targets) {
        if p.shape() != t.shape() {
            return Err(CoreError::Config(format!("prediction {:?} vs target {:?}", p.shape(), t.shape())));
        }
        let s = p.sub(t)?.square().sum_all();
        count += p.numel();
        total = Some(match total {
            None => s,
            Some(acc) => acc.add(&s)?,
        });
    }
    let total = total.expect("non-empty");
    Ok(total.scale(T::one() / T::from_usize(count).expect("count")))
}

/// Loss of an unrolled batch against its own codes `1..n`.
pub fn sequence_loss<T: Element>(rnn: &Rnn<T>, batch: &SequenceBatch<T>, teacher_forced: usize) -> Result<Tensor<T>> {
    let out = rnn.unroll(batch, teacher_forced)?;
    rnn_loss(&out.predictions, &batch.codes[1..])
}
