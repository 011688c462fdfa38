use lrsim_tensor::{BatchStats, Element, SeededRng, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const DEFAULT_LEAKY_ALPHA: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv,
    Deconv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
    Tanh,
    Sigmoid,
    None,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu { alpha: DEFAULT_LEAKY_ALPHA }
    }

    pub fn apply<T: Element>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::LeakyRelu { alpha } => x.leaky_relu(T::from_f64_lossy(alpha)),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::None => x.clone(),
        }
    }
}

/// One layer of a feed-forward stack.
///
/// Dense layers flatten their input; `unflatten` reshapes a dense output to
/// `[outputs / (h*w), h, w]`. Layers with batch norm carry no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub inputs: usize,
    pub outputs: usize,
    #[serde(default)]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub output_padding: usize,
    #[serde(default)]
    pub norm: bool,
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unflatten: Option<[usize; 2]>,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            inputs,
            outputs,
            kernel: 0,
            stride: 1,
            padding: 0,
            output_padding: 0,
            norm: false,
            activation: Activation::None,
            unflatten: None,
        }
    }

    pub fn conv(inputs: usize, outputs: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec { kind: LayerKind::Conv, kernel, stride, padding, ..Self::dense(inputs, outputs) }
    }

    /// Transposed conv; `output_padding` defaults to 1 for stride-2 odd kernels.
    pub fn deconv(inputs: usize, outputs: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let output_padding = usize::from(stride == 2 && kernel % 2 == 1);
        LayerSpec { kind: LayerKind::Deconv, kernel, stride, padding, output_padding, ..Self::dense(inputs, outputs) }
    }

    pub fn with_norm(mut self) -> Self {
        self.norm = true;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = output_padding;
        self
    }

    pub fn unflatten_to(mut self, h: usize, w: usize) -> Self {
        self.unflatten = Some([h, w]);
        self
    }

    pub fn has_bias(&self) -> bool {
        !self.norm
    }

    /// Channel count seen by batch norm.
    fn norm_channels(&self) -> usize {
        match (self.kind, self.unflatten) {
            (LayerKind::Dense, Some([h, w])) => self.outputs / (h * w),
            _ => self.outputs,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense => vec![self.inputs, self.outputs],
            LayerKind::Conv => vec![self.outputs, self.inputs, self.kernel, self.kernel],
            LayerKind::Deconv => vec![self.inputs, self.outputs, self.kernel, self.kernel],
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(NnError::Config(msg));
        match self.kind {
            LayerKind::Dense => {
                let n: usize = input.iter().product();
                if n != self.inputs {
                    return bad(format!("dense layer expects {} inputs, got shape {input:?}", self.inputs));
                }
                match self.unflatten {
                    None => Ok(vec![self.outputs]),
                    Some([h, w]) => {
                        if h * w == 0 || self.outputs % (h * w) != 0 {
                            return bad(format!("cannot unflatten {} outputs to {h}x{w}", self.outputs));
                        }
                        Ok(vec![self.outputs / (h * w), h, w])
                    }
                }
            }
            LayerKind::Conv | LayerKind::Deconv => {
                let [c, h, w] = input else {
                    return bad(format!("convolution expects [C, H, W], got {input:?}"));
                };
                if *c != self.inputs {
                    return bad(format!("convolution expects {} channels, got {c}", self.inputs));
                }
                let (k, s, p) = (self.kernel as isize, self.stride as isize, self.padding as isize);
                if k == 0 || s == 0 {
                    return bad("kernel and stride must be positive".into());
                }
                let extent = |i: usize| -> isize {
                    let i = i as isize;
                    if self.kind == LayerKind::Conv {
                        if i + 2 * p < k {
                            0
                        } else {
                            (i + 2 * p - k) / s + 1
                        }
                    } else {
                        (i - 1) * s - 2 * p + k + self.output_padding as isize
                    }
                };
                let (oh, ow) = (extent(*h), extent(*w));
                if oh <= 0 || ow <= 0 {
                    return bad(format!("layer produces non-positive extent from {input:?}"));
                }
                Ok(vec![self.outputs, oh as usize, ow as usize])
            }
        }
    }
}

/// Trainable tensor with a stable name.
#[derive(Debug, Clone)]
pub struct Param<T: Element = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

impl<T: Element> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param { name: name.into(), value: value.to_param() }
    }

    /// Replaces the value with a fresh gradient-collecting leaf.
    pub fn set(&mut self, data: Vec<T>) {
        self.value = Tensor::param(data, self.value.shape()).expect("parameter shape is fixed");
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T: Element> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Number of training-mode statistic updates absorbed so far.
    pub updates: u64,
}

#[derive(Debug, Clone)]
pub struct Layer<T: Element> {
    pub spec: LayerSpec,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub norm: Option<BatchNorm<T>>,
}

/// Result of running one layer.
pub(crate) struct LayerOutput<T: Element> {
    pub pre_norm: Tensor<T>,
    pub output: Tensor<T>,
    pub stats: Option<BatchStats<T>>,
}

impl<T: Element> Layer<T> {
    /// Draws initial parameters: weights ~ N(0, 0.02²), gamma ~ N(1, 0.02²),
    /// biases and beta zero.
    pub fn init(spec: LayerSpec, prefix: &str, rng: &mut SeededRng) -> Self {
        let wshape = spec.weight_shape();
        let wn: usize = wshape.iter().product();
        let weight = Param::new(
            format!("{prefix}.weight"),
            Tensor::from_vec(rng.gaussian_vec(wn, 0.0, INIT_STD), &wshape).expect("weight shape"),
        );
        let bias = spec.has_bias().then(|| Param::new(format!("{prefix}.bias"), Tensor::zeros(&[spec.outputs])));
        let norm = spec.norm.then(|| {
            let c = spec.norm_channels();
            BatchNorm {
                gamma: Param::new(
                    format!("{prefix}.bn.gamma"),
                    Tensor::from_vec(rng.gaussian_vec(c, 1.0, INIT_STD), &[c]).expect("gamma shape"),
                ),
                beta: Param::new(format!("{prefix}.bn.beta"), Tensor::zeros(&[c])),
                running_mean: vec![T::zero(); c],
                running_var: vec![T::one(); c],
                updates: 0,
            }
        });
        Layer { spec, weight, bias, norm }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = vec![&self.weight];
        out.extend(self.bias.as_ref());
        if let Some(bn) = &self.norm {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = vec![&mut self.weight];
        out.extend(self.bias.as_mut());
        if let Some(bn) = &mut self.norm {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out
    }

    pub(crate) fn forward(&self, x: &Tensor<T>, train: bool, frozen: bool, stop_pre_norm: bool) -> Result<LayerOutput<T>> {
        let p = |param: &Param<T>| if frozen { param.value.detach() } else { param.value.clone() };
        let spec = &self.spec;
        let w = p(&self.weight);
        let mut y = match spec.kind {
            LayerKind::Dense => x.flatten_batch()?.matmul(&w)?,
            LayerKind::Conv => x.conv2d(&w, spec.stride, spec.padding)?,
            LayerKind::Deconv => x.deconv2d(&w, spec.stride, spec.padding, spec.output_padding)?,
        };
        if let Some(b) = &self.bias {
            let b = p(b);
            y = match spec.kind {
                LayerKind::Dense => y.add(&b.reshape(&[1, spec.outputs])?)?,
                _ => y.add(&b.reshape(&[1, spec.outputs, 1, 1])?)?,
            };
        }
        if let (LayerKind::Dense, Some([h, w])) = (spec.kind, spec.unflatten) {
            let n = y.dim(0);
            y = y.reshape(&[n, spec.outputs / (h * w), h, w])?;
        }
        if stop_pre_norm {
            return Ok(LayerOutput { pre_norm: y.clone(), output: y, stats: None });
        }
        let pre_norm = y.clone();
        let eps = T::from_f64_lossy(BN_EPS);
        let mut stats = None;
        if let Some(bn) = &self.norm {
            let (gamma, beta) = (p(&bn.gamma), p(&bn.beta));
            y = if train {
                let (out, s) = y.batch_norm_train(&gamma, &beta, eps)?;
                stats = Some(s);
                out
            } else {
                y.batch_norm_eval(&gamma, &beta, &bn.running_mean, &bn.running_var, eps)?
            };
        }
        Ok(LayerOutput { pre_norm, output: spec.activation.apply(&y), stats })
    }
}
