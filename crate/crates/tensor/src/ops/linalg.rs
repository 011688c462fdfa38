use crate::element::{gemm, Element, Strides};
use crate::error::{shape_err, Result};
use crate::tensor::{numel_of, Tensor};

impl<T: Element> Tensor<T> {
    /// `[m x k] · [k x n] -> [m x n]`.
    pub fn matmul(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || b.rank() != 2 {
            return shape_err(format!("matmul needs 2-D operands, got {:?} and {:?}", self.shape(), b.shape()));
        }
        let (m, k, n) = (self.dim(0), self.dim(1), b.dim(1));
        if b.dim(0) != k {
            return shape_err(format!("matmul inner extents differ: {:?} · {:?}", self.shape(), b.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.data(), Strides::row_major(k), b.data(), Strides::row_major(n), T::zero(), &mut out, Strides::row_major(n));
        let (ac, bc) = (self.clone(), b.clone());
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            "matmul",
            vec![self.clone(), b.clone()],
            Box::new(move |g, _| {
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                let ga = ac.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(m, n, k, g, Strides::row_major(n), bc.data(), Strides::transposed(n), T::zero(), &mut ga, Strides::row_major(k));
                    ga
                });
                let gb = bc.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(k, m, n, ac.data(), Strides::transposed(k), g, Strides::row_major(n), T::zero(), &mut gb, Strides::row_major(n));
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return shape_err(format!("transpose needs a 2-D tensor, got {:?}", self.shape()));
        }
        let (r, c) = (self.dim(0), self.dim(1));
        let src = self.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![c, r],
            "transpose",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        gi[i * c + j] = g[j * r + i];
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(shape) != self.numel() {
            return shape_err(format!("cannot reshape {:?} to {:?}", self.shape(), shape));
        }
        if shape == self.shape() {
            return Ok(self.clone());
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// `[N x ...] -> [N x prod(...)]`.
    pub fn flatten_batch(&self) -> Result<Tensor<T>> {
        if self.rank() == 0 {
            return shape_err("cannot flatten a scalar");
        }
        let n = self.dim(0);
        let rest = self.shape()[1..].iter().product();
        self.reshape(&[n, rest])
    }
}
