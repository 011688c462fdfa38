use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Population (biased) variance.
    pub var: Vec<T>,
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return shape_err(format!("batch norm needs [N x C x ...], got {shape:?}"));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn check_affine<T: Element>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.numel() != c || beta.numel() != c {
        return shape_err(format!(
            "batch norm gamma/beta extents {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        ));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    /// Normalizes each channel (axis 1) by its batch mean and population
    /// variance over every other axis, then applies `gamma`/`beta`.
    pub fn batch_norm_train(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<(Tensor<T>, BatchStats<T>)> {
        let (n, c, s) = layout(self.shape())?;
        check_affine(c, gamma, beta)?;
        let count = n * s;
        if count == 0 {
            return shape_err("batch norm over an empty batch");
        }
        let m = T::from_usize(count).unwrap();
        let x = self.data();
        let idx = move |b: usize, ch: usize, i: usize| (b * c + ch) * s + i;

        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut acc = T::zero();
            for b in 0..n {
                for i in 0..s {
                    acc = acc + x[idx(b, ch, i)];
                }
            }
            let mu = acc / m;
            let mut sq = T::zero();
            for b in 0..n {
                for i in 0..s {
                    let d = x[idx(b, ch, i)] - mu;
                    sq = sq + d * d;
                }
            }
            mean[ch] = mu;
            var[ch] = sq / m;
        }
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let mut x_hat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let (gd, bd) = (gamma.data(), beta.data());
        for b in 0..n {
            for ch in 0..c {
                for i in 0..s {
                    let j = idx(b, ch, i);
                    x_hat[j] = (x[j] - mean[ch]) * inv_std[ch];
                    out[j] = gd[ch] * x_hat[j] + bd[ch];
                }
            }
        }
        let (xc, gc, bc) = (self.clone(), gamma.clone(), beta.clone());
        let inv = inv_std;
        let y = Tensor::from_op(
            out,
            self.shape().to_vec(),
            "batch_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _| {
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in 0..s {
                            let j = idx(b, ch, i);
                            sum_g[ch] = sum_g[ch] + g[j];
                            sum_gx[ch] = sum_gx[ch] + g[j] * x_hat[j];
                        }
                    }
                }
                let gx = xc.requires_grad().then(|| {
                    let gd = gc.data();
                    let mut gx = vec![T::zero(); g.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let scale = gd[ch] * inv[ch] / m;
                            for i in 0..s {
                                let j = idx(b, ch, i);
                                gx[j] = scale * (m * g[j] - sum_g[ch] - x_hat[j] * sum_gx[ch]);
                            }
                        }
                    }
                    gx
                });
                let gg = gc.requires_grad().then(|| sum_gx.clone());
                let gb = bc.requires_grad().then(|| sum_g.clone());
                vec![gx, gg, gb]
            }),
        );
        Ok((y, BatchStats { mean, var }))
    }

    /// Batch norm with fixed statistics (inference mode).
    pub fn batch_norm_eval(&self, gamma: &Tensor<T>, beta: &Tensor<T>, mean: &[T], var: &[T], eps: T) -> Result<Tensor<T>> {
        let (n, c, s) = layout(self.shape())?;
        check_affine(c, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return shape_err("running statistics do not match channel count");
        }
        let inv: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let x = self.data();
        let idx = move |b: usize, ch: usize, i: usize| (b * c + ch) * s + i;
        let mut out = vec![T::zero(); x.len()];
        let (gd, bd) = (gamma.data(), beta.data());
        for b in 0..n {
            for ch in 0..c {
                for i in 0..s {
                    let j = idx(b, ch, i);
                    out[j] = gd[ch] * (x[j] - mean[ch]) * inv[ch] + bd[ch];
                }
            }
        }
        let mean = mean.to_vec();
        let (xc, gc, bc) = (self.clone(), gamma.clone(), beta.clone());
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "batch_norm_eval",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _| {
                let x = xc.data();
                let gd = gc.data();
                let mut gx = xc.requires_grad().then(|| vec![T::zero(); g.len()]);
                let mut gg = vec![T::zero(); c];
                let mut gb = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in 0..s {
                            let j = idx(b, ch, i);
                            let xh = (x[j] - mean[ch]) * inv[ch];
                            gg[ch] = gg[ch] + g[j] * xh;
                            gb[ch] = gb[ch] + g[j];
                            if let Some(gx) = gx.as_mut() {
                                gx[j] = g[j] * gd[ch] * inv[ch];
                            }
                        }
                    }
                }
                vec![gx, gc.requires_grad().then_some(gg), bc.requires_grad().then_some(gb)]
            }),
        ))
    }
}
