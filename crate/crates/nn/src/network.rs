use std::collections::HashMap;

use lrsim_tensor::{BatchStats, Element, SeededRng, Tensor};

use crate::error::{NnError, Result};
use crate::layer::{Layer, LayerSpec, Param, BN_MOMENTUM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics normalize; statistics are returned for absorption.
    Train,
    /// Running statistics normalize.
    Eval,
}

/// How a forward pass treats the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pass {
    pub mode: Mode,
    /// Parameters enter the graph detached, so no gradient reaches them.
    pub frozen: bool,
}

impl Pass {
    pub const TRAIN: Pass = Pass { mode: Mode::Train, frozen: false };
    pub const TRAIN_FROZEN: Pass = Pass { mode: Mode::Train, frozen: true };
    pub const EVAL: Pass = Pass { mode: Mode::Eval, frozen: false };
}

pub struct ForwardOutput<T: Element> {
    pub output: Tensor<T>,
    /// Pre-norm, pre-activation output of the tapped layer.
    pub tap: Option<Tensor<T>>,
    /// One entry per layer; `Some` for normalized layers in train mode.
    pub stats: Vec<Option<BatchStats<T>>>,
    /// Eval pass used running statistics that never absorbed a training batch.
    pub fresh_stats_used: bool,
}

/// Feed-forward stack of layers with stable parameter names
/// `<name>.l<index>.<param>`.
#[derive(Debug, Clone)]
pub struct Network<T: Element = f32> {
    name: String,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

impl<T: Element> Network<T> {
    /// Validates that the layer shapes compose and draws initial parameters.
    pub fn new(name: &str, input_shape: &[usize], specs: &[LayerSpec], rng: &mut SeededRng) -> Result<Self> {
        if specs.is_empty() {
            return Err(NnError::Config(format!("network `{name}` has no layers")));
        }
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            shape = spec
                .output_shape(&shape)
                .map_err(|e| NnError::Config(format!("{name} layer {i}: {e}")))?;
            layers.push(Layer::init(spec.clone(), &format!("{name}.l{i}"), rng));
        }
        Ok(Network { name: name.to_string(), input_shape: input_shape.to_vec(), output_shape: shape, layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    pub fn forward(&self, x: &Tensor<T>, pass: Pass) -> Result<ForwardOutput<T>> {
        self.run(x, pass, None, false)
    }

    /// Full forward pass that also records the tapped layer.
    pub fn forward_tapped(&self, x: &Tensor<T>, pass: Pass, tap: usize) -> Result<ForwardOutput<T>> {
        self.run(x, pass, Some(tap), false)
    }

    /// Runs layers up to `tap` and returns its pre-norm output as both
    /// `output` and `tap`.
    pub fn forward_until(&self, x: &Tensor<T>, pass: Pass, tap: usize) -> Result<ForwardOutput<T>> {
        self.run(x, pass, Some(tap), true)
    }

    fn run(&self, x: &Tensor<T>, pass: Pass, tap: Option<usize>, stop: bool) -> Result<ForwardOutput<T>> {
        if let Some(t) = tap {
            if t >= self.layers.len() {
                return Err(NnError::Config(format!("tap layer {t} out of range for `{}`", self.name)));
            }
        }
        let mut expected = vec![x.shape().first().copied().unwrap_or(0)];
        expected.extend(&self.input_shape);
        if x.shape() != expected.as_slice() {
            return Err(NnError::Config(format!(
                "`{}` expects input [N, {:?}], got {:?}",
                self.name,
                self.input_shape,
                x.shape()
            )));
        }
        let train = pass.mode == Mode::Train;
        let mut h = x.clone();
        let mut tapped = None;
        let mut stats = Vec::with_capacity(self.layers.len());
        let mut fresh = false;
        for (i, layer) in self.layers.iter().enumerate() {
            let halt = stop && tap == Some(i);
            let out = layer.forward(&h, train, pass.frozen, halt)?;
            if !train && layer.norm.as_ref().is_some_and(|bn| bn.updates == 0) {
                fresh = true;
            }
            stats.push(out.stats);
            if tap == Some(i) {
                tapped = Some(out.pre_norm);
            }
            h = out.output;
            if halt {
                break;
            }
        }
        if fresh {
            log::debug!("`{}` evaluated with running statistics that saw no training batch", self.name);
        }
        Ok(ForwardOutput { output: h, tap: tapped, stats, fresh_stats_used: fresh })
    }

    /// Folds batch statistics into the running estimates:
    /// `running = m * running + (1 - m) * batch`.
    pub fn absorb_stats(&mut self, stats: &[Option<BatchStats<T>>]) {
        let m = T::from_f64_lossy(BN_MOMENTUM);
        let one_minus = T::one() - m;
        for (layer, s) in self.layers.iter_mut().zip(stats) {
            let (Some(bn), Some(s)) = (layer.norm.as_mut(), s) else { continue };
            for (r, &b) in bn.running_mean.iter_mut().zip(&s.mean) {
                *r = m * *r + one_minus * b;
            }
            for (r, &b) in bn.running_var.iter_mut().zip(&s.var) {
                *r = m * *r + one_minus * b;
            }
            bn.updates += 1;
        }
    }

    /// Parameters plus running statistics, keyed by name.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for p in layer.params() {
                out.push((p.name.clone(), p.value.detach()));
            }
            if let Some(bn) = &layer.norm {
                let c = bn.running_mean.len();
                let prefix = format!("{}.l{i}.bn", self.name);
                out.push((format!("{prefix}.running_mean"), Tensor::from_vec(bn.running_mean.clone(), &[c]).expect("1-d")));
                out.push((format!("{prefix}.running_var"), Tensor::from_vec(bn.running_var.clone(), &[c]).expect("1-d")));
            }
        }
        out
    }

    /// Restores everything `state` produced. Shapes must match exactly.
    pub fn load_state(&mut self, state: &HashMap<String, Tensor<T>>) -> Result<()> {
        let fetch = |name: &str, shape: &[usize]| -> Result<Vec<T>> {
            let t = state.get(name).ok_or_else(|| NnError::Missing(name.to_string()))?;
            if t.shape() != shape {
                return Err(NnError::Config(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t.to_vec())
        };
        let net = self.name.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for p in layer.params_mut() {
                let data = fetch(&p.name, p.value.shape())?;
                p.set(data);
            }
            if let Some(bn) = &mut layer.norm {
                let c = [bn.running_mean.len()];
                bn.running_mean = fetch(&format!("{net}.l{i}.bn.running_mean"), &c)?;
                bn.running_var = fetch(&format!("{net}.l{i}.bn.running_var"), &c)?;
                bn.updates = bn.updates.max(1);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::Activation;

    fn tiny(rng: &mut SeededRng) -> Network<f64> {
        let specs = [
            LayerSpec::conv(1, 2, 3, 2, 1).with_activation(Activation::Relu),
            LayerSpec::conv(2, 3, 3, 2, 1).with_norm().with_activation(Activation::leaky()),
            LayerSpec::dense(12, 1).with_activation(Activation::Sigmoid),
        ];
        Network::new("net", &[1, 8, 8], &specs, rng).unwrap()
    }

    #[test]
    fn rejects_mismatched_stack() {
        let mut rng = SeededRng::new(1);
        let specs = [LayerSpec::conv(1, 2, 3, 2, 1), LayerSpec::dense(10, 1)];
        assert!(Network::<f32>::new("bad", &[1, 8, 8], &specs, &mut rng).is_err());
    }

    #[test]
    fn tap_matches_truncated_pass() {
        let mut rng = SeededRng::new(3);
        let net = tiny(&mut rng);
        let x = rng.gaussian::<f64>(&[4, 1, 8, 8]);
        let full = net.forward_tapped(&x, Pass::TRAIN, 1).unwrap();
        let until = net.forward_until(&x, Pass::TRAIN, 1).unwrap();
        assert_eq!(full.output.shape(), &[4, 1]);
        assert_eq!(full.tap.unwrap().to_vec(), until.output.to_vec());
        assert_eq!(until.output.shape(), &[4, 3, 2, 2]);
    }

    #[test]
    fn frozen_pass_leaves_params_without_gradient() {
        let mut rng = SeededRng::new(4);
        let net = tiny(&mut rng);
        let x = rng.gaussian::<f64>(&[2, 1, 8, 8]).to_param();
        let loss = net.forward(&x, Pass::TRAIN_FROZEN).unwrap().output.sum_all();
        let g = loss.backward().unwrap();
        assert!(g.contains(&x));
        for p in net.params() {
            assert!(!g.contains(&p.value), "{} received a gradient", p.name);
        }
        let loss = net.forward(&x, Pass::TRAIN).unwrap().output.sum_all();
        let g = loss.backward().unwrap();
        assert!(net.params().iter().all(|p| g.contains(&p.value)));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut rng = SeededRng::new(5);
        let mut net = tiny(&mut rng);
        let x = rng.gaussian::<f64>(&[4, 1, 8, 8]);
        let eval = net.forward(&x, Pass::EVAL).unwrap();
        assert!(eval.fresh_stats_used);
        let out = net.forward(&x, Pass::TRAIN).unwrap();
        let s = out.stats[1].clone().unwrap();
        net.absorb_stats(&out.stats);
        let bn = net.layers()[1].norm.as_ref().unwrap();
        for c in 0..3 {
            assert!((bn.running_mean[c] - 0.1 * s.mean[c]).abs() < 1e-15);
            assert!((bn.running_var[c] - (0.9 + 0.1 * s.var[c])).abs() < 1e-15);
        }
        assert!(!net.forward(&x, Pass::EVAL).unwrap().fresh_stats_used);
    }

    #[test]
    fn state_roundtrip() {
        let mut rng = SeededRng::new(6);
        let a = tiny(&mut rng);
        let mut b = tiny(&mut rng);
        let map: HashMap<_, _> = a.state().into_iter().collect();
        b.load_state(&map).unwrap();
        let x = rng.gaussian::<f64>(&[3, 1, 8, 8]);
        let ya = a.forward(&x, Pass::EVAL).unwrap().output.to_vec();
        let yb = b.forward(&x, Pass::EVAL).unwrap().output.to_vec();
        assert_eq!(ya, yb);
    }
}
