//! Central finite differences for checking analytic gradients.
//!
//! Only forward evaluations are used here, so the numbers are independent
//! of every backward implementation they are compared with.

use crate::tensor::Tensor;

/// Default perturbation for 64-bit checks.
pub const STEP: f64 = 1e-4;

/// Numerical gradient of a scalar function with respect to each input.
pub fn numerical_gradients(f: impl Fn(&[Tensor<f64>]) -> f64, inputs: &[Tensor<f64>], step: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(inputs.len());
    for (which, input) in inputs.iter().enumerate() {
        let mut grad = vec![0.0; input.numel()];
        for (i, g) in grad.iter_mut().enumerate() {
            let eval = |delta: f64| {
                let mut vals = input.to_vec();
                vals[i] += delta;
                let bumped = Tensor::from_vec(vals, input.shape()).expect("shape");
                let args: Vec<Tensor<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| if j == which { bumped.clone() } else { t.clone() })
                    .collect();
                f(&args)
            };
            *g = (eval(step) - eval(-step)) / (2.0 * step);
        }
        out.push(grad);
    }
    out
}

/// Largest elementwise `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `‖a - n‖₂ / max(‖a‖₂, ‖n‖₂)`; zero when both vanish.
pub fn norm_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}
