use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::tensor::Tensor;

/// Deterministic random stream. Gaussian samples use the Box–Muller
/// transform so the sequence depends only on the seed.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { inner: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    /// Independent stream derived from `(seed, stream)`.
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { inner, spare: None }
    }

    /// Uniform in `[0, 1)`.
    pub fn next_uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn next_below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn gaussian_vec<T: Element>(&mut self, n: usize, mean: f64, std: f64) -> Vec<T> {
        (0..n).map(|_| T::from_f64_lossy(mean + std * self.next_gaussian())).collect()
    }

    /// Standard normal tensor.
    pub fn gaussian<T: Element>(&mut self, shape: &[usize]) -> Tensor<T> {
        let n = shape.iter().product();
        Tensor::from_vec(self.gaussian_vec(n, 0.0, 1.0), shape).expect("shape")
    }

    pub fn uniform<T: Element>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64_lossy(lo + (hi - lo) * self.next_uniform())).collect();
        Tensor::from_vec(data, shape).expect("shape")
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<V>(&mut self, items: &mut [V]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}
