use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// For each input flat index, the flat index of its reduced output cell.
fn reduce_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let keep: Vec<bool> = (0..shape.len()).map(|d| !axes.contains(&d)).collect();
    let out_shape: Vec<usize> = shape.iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| *s).collect();
    let mut out_strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        if keep[d] {
            out_strides[d] = acc;
            acc *= shape[d];
        }
    }
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut o = 0usize;
    for _ in 0..n {
        map.push(o);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            o += out_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            o -= out_strides[d] * shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, map)
}

impl<T: Element> Tensor<T> {
    /// Reduces over `axes` (dropping them). An empty axis list reduces
    /// every axis to a scalar.
    pub fn reduce(&self, op: Reduction, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let axes: Vec<usize> = if axes.is_empty() { (0..rank).collect() } else { axes.to_vec() };
        for (i, &a) in axes.iter().enumerate() {
            if a >= rank || axes[..i].contains(&a) {
                return shape_err(format!("invalid reduction axes {axes:?} for rank {rank}"));
            }
        }
        let (out_shape, map) = reduce_map(self.shape(), &axes);
        let out_n: usize = out_shape.iter().product();
        let count: usize = axes.iter().map(|&a| self.dim(a)).product();
        let mut data = vec![T::zero(); out_n];
        for (v, &o) in self.data().iter().zip(&map) {
            data[o] = data[o] + *v;
        }
        let factor = match op {
            Reduction::Sum => T::one(),
            Reduction::Mean => T::one() / T::from_usize(count).unwrap(),
        };
        if op == Reduction::Mean {
            for v in &mut data {
                *v = *v * factor;
            }
        }
        let name = match op {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        };
        Ok(Tensor::from_op(
            data,
            out_shape,
            name,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(map.iter().map(|&o| g[o] * factor).collect())]),
        ))
    }

    pub fn sum(&self, axes: &[usize]) -> Result<Tensor<T>> {
        self.reduce(Reduction::Sum, axes)
    }

    pub fn mean(&self, axes: &[usize]) -> Result<Tensor<T>> {
        self.reduce(Reduction::Mean, axes)
    }

    pub fn sum_all(&self) -> Tensor<T> {
        self.reduce(Reduction::Sum, &[]).expect("full reduction")
    }

    pub fn mean_all(&self) -> Tensor<T> {
        self.reduce(Reduction::Mean, &[]).expect("full reduction")
    }
}
