use crate::element::{gemm, Element, Strides};
use crate::error::{shape_err, Result};
use crate::parallel::for_each_chunk;
use crate::tensor::Tensor;

/// Sliding-window geometry of one convolution, seen from the side that is
/// scanned by the kernel ("image") toward the side with one row per window
/// position ("patches").
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Calls `f(row, col, image_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = oy * self.out_w + ox;
                for c in 0..self.channels {
                    for ky in 0..self.kh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            let col = (c * self.kh + ky) * self.kw + kx;
                            debug_assert!(col < k);
                            f(row, col, (c * self.height + iy as usize) * self.width + ix as usize);
                        }
                    }
                }
            }
        }
    }

    /// Image `[C x H x W]` -> patch rows `[P x K]` (zero padded).
    fn im2col<T: Element>(&self, image: &[T], cols: &mut [T]) {
        let k = self.patch_len();
        cols.fill(T::zero());
        self.for_each_tap(|row, col, i| cols[row * k + col] = image[i]);
    }

    /// Scatter-adds patch rows back onto an image.
    fn col2im<T: Element>(&self, cols: &[T], image: &mut [T]) {
        let k = self.patch_len();
        self.for_each_tap(|row, col, i| image[i] = image[i] + cols[row * k + col]);
    }
}

fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = input + 2 * pad;
    if stride == 0 || kernel == 0 || span < kernel {
        return None;
    }
    Some((span - kernel) / stride + 1)
}

/// `[N x F x P]` <-> `[N*P x F]`.
fn to_rows<T: Element>(x: &[T], n: usize, f: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for c in 0..f {
            for q in 0..p {
                out[(b * p + q) * f + c] = x[(b * f + c) * p + q];
            }
        }
    }
    out
}

fn from_rows<T: Element>(rows: &[T], n: usize, f: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows.len()];
    for b in 0..n {
        for c in 0..f {
            for q in 0..p {
                out[(b * f + c) * p + q] = rows[(b * p + q) * f + c];
            }
        }
    }
    out
}

impl<T: Element> Tensor<T> {
    /// 2-D cross-correlation: `[N x C x H x W] * [F x C x kh x kw] -> [N x F x H' x W']`
    /// with `H' = floor((H + 2·pad - kh) / stride) + 1`.
    pub fn conv2d(&self, kernel: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 || kernel.rank() != 4 {
            return shape_err(format!("conv2d needs 4-D input and kernel, got {:?}, {:?}", self.shape(), kernel.shape()));
        }
        let (n, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (f, kc, kh, kw) = (kernel.dim(0), kernel.dim(1), kernel.dim(2), kernel.dim(3));
        if kc != c {
            return shape_err(format!("conv2d kernel expects {kc} channels, input has {c}"));
        }
        let (Some(oh), Some(ow)) = (conv_out_extent(h, kh, stride, pad), conv_out_extent(w, kw, stride, pad)) else {
            return shape_err(format!(
                "conv2d output extent is not positive for input {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}"
            ));
        };
        let g = Geometry { channels: c, height: h, width: w, kh, kw, stride, pad, out_h: oh, out_w: ow };
        let (k, p) = (g.patch_len(), g.positions());

        let mut cols = vec![T::zero(); n * p * k];
        let input = self.data();
        for_each_chunk(&mut cols, p * k, |b, chunk| g.im2col(&input[b * g.image_len()..(b + 1) * g.image_len()], chunk));

        // rows [N*P x F] = cols [N*P x K] · kernelᵀ [K x F]
        let mut rows = vec![T::zero(); n * p * f];
        gemm(n * p, k, f, &cols, Strides::row_major(k), kernel.data(), Strides::transposed(k), T::zero(), &mut rows, Strides::row_major(f));
        let out = from_rows(&rows, n, f, p);

        let need_cols = Tensor::tracking(&[kernel]);
        let saved_cols = need_cols.then_some(cols);
        let (xc, kc) = (self.clone(), kernel.clone());
        Ok(Tensor::from_op(
            out,
            vec![n, f, oh, ow],
            "conv2d",
            vec![self.clone(), kernel.clone()],
            Box::new(move |grad, _| {
                let g_rows = to_rows(grad, n, f, p);
                let gk = kc.requires_grad().then(|| {
                    // dK [F x K] = g_rowsᵀ [F x N*P] · cols [N*P x K]
                    let cols = saved_cols.as_ref().expect("saved patches");
                    let mut gk = vec![T::zero(); f * k];
                    gemm(f, n * p, k, &g_rows, Strides::transposed(f), cols, Strides::row_major(k), T::zero(), &mut gk, Strides::row_major(k));
                    gk
                });
                let gx = xc.requires_grad().then(|| {
                    // d_cols [N*P x K] = g_rows [N*P x F] · kernel [F x K]
                    let mut d_cols = vec![T::zero(); n * p * k];
                    gemm(n * p, f, k, &g_rows, Strides::row_major(f), kc.data(), Strides::row_major(k), T::zero(), &mut d_cols, Strides::row_major(k));
                    let mut gx = vec![T::zero(); n * g.image_len()];
                    for_each_chunk(&mut gx, g.image_len(), |b, img| g.col2im(&d_cols[b * p * k..(b + 1) * p * k], img));
                    gx
                });
                vec![gx, gk]
            }),
        ))
    }

    /// Transposed convolution: `[N x C x H x W] * [C x F x kh x kw] -> [N x F x H' x W']`
    /// with `H' = (H - 1)·stride - 2·pad + kh + output_padding`.
    ///
    /// The forward pass is exactly the input-gradient pass of `conv2d` with the
    /// same kernel tensor and geometry.
    pub fn deconv2d(&self, kernel: &Tensor<T>, stride: usize, pad: usize, output_padding: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 || kernel.rank() != 4 {
            return shape_err(format!("deconv2d needs 4-D input and kernel, got {:?}, {:?}", self.shape(), kernel.shape()));
        }
        let (n, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (kc, f, kh, kw) = (kernel.dim(0), kernel.dim(1), kernel.dim(2), kernel.dim(3));
        if kc != c {
            return shape_err(format!("deconv2d kernel expects {kc} input channels, input has {c}"));
        }
        if stride == 0 || output_padding >= stride {
            return shape_err(format!("deconv2d output_padding {output_padding} must be smaller than stride {stride}"));
        }
        let extent = |i: usize, k: usize| -> Option<usize> {
            let v = (i as isize - 1) * stride as isize - 2 * pad as isize + k as isize + output_padding as isize;
            (v > 0 && i > 0).then_some(v as usize)
        };
        let (Some(oh), Some(ow)) = (extent(h, kh), extent(w, kw)) else {
            return shape_err(format!("deconv2d output extent is not positive for input {h}x{w}, kernel {kh}x{kw}"));
        };
        // Conv geometry scanning the output image; its window grid is the input grid.
        let g = Geometry { channels: f, height: oh, width: ow, kh, kw, stride, pad, out_h: h, out_w: w };
        debug_assert_eq!(conv_out_extent(oh, kh, stride, pad), Some(h));
        let (k, p) = (g.patch_len(), g.positions());

        let x_rows = to_rows(self.data(), n, c, p);
        // cols [N*P x K] = x_rows [N*P x C] · kernel [C x K]
        let mut cols = vec![T::zero(); n * p * k];
        gemm(n * p, c, k, &x_rows, Strides::row_major(c), kernel.data(), Strides::row_major(k), T::zero(), &mut cols, Strides::row_major(k));
        let mut out = vec![T::zero(); n * g.image_len()];
        for_each_chunk(&mut out, g.image_len(), |b, img| g.col2im(&cols[b * p * k..(b + 1) * p * k], img));

        let saved_rows = Tensor::tracking(&[kernel]).then_some(x_rows);
        let (xc, kc) = (self.clone(), kernel.clone());
        Ok(Tensor::from_op(
            out,
            vec![n, f, oh, ow],
            "deconv2d",
            vec![self.clone(), kernel.clone()],
            Box::new(move |grad, _| {
                let mut g_cols = vec![T::zero(); n * p * k];
                for_each_chunk(&mut g_cols, p * k, |b, chunk| g.im2col(&grad[b * g.image_len()..(b + 1) * g.image_len()], chunk));
                let gk = kc.requires_grad().then(|| {
                    // dK [C x K] = x_rowsᵀ [C x N*P] · g_cols [N*P x K]
                    let x_rows = saved_rows.as_ref().expect("saved input rows");
                    let mut gk = vec![T::zero(); c * k];
                    gemm(c, n * p, k, x_rows, Strides::transposed(c), &g_cols, Strides::row_major(k), T::zero(), &mut gk, Strides::row_major(k));
                    gk
                });
                let gx = xc.requires_grad().then(|| {
                    // dx_rows [N*P x C] = g_cols [N*P x K] · kernelᵀ [K x C]
                    let mut gx_rows = vec![T::zero(); n * p * c];
                    gemm(n * p, k, c, &g_cols, Strides::row_major(k), kc.data(), Strides::transposed(k), T::zero(), &mut gx_rows, Strides::row_major(c));
                    from_rows(&gx_rows, n, c, p)
                });
                vec![gx, gk]
            }),
        ))
    }
}
