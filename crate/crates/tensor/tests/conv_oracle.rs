//! Convolutions against direct nested-loop oracles.

use lrsim_tensor::{SeededRng, Tensor};

/// Direct cross-correlation, accumulating in (c, ky, kx) order.
fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (f, _, kh, kw) = (k.dim(0), k.dim(1), k.dim(2), k.dim(3));
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = xd[((b * c + ch) * h + iy as usize) * w + ix as usize];
                                let kv = kd[((o * c + ch) * kh + ky) * kw + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * f + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (vec![n, f, oh, ow], out)
}

/// Transposed convolution by scattering every input tap.
fn deconv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize, out_pad: usize) -> (Vec<usize>, Vec<f64>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (_, f, kh, kw) = (k.dim(0), k.dim(1), k.dim(2), k.dim(3));
    let oh = (h - 1) * stride + kh + out_pad - 2 * pad;
    let ow = (w - 1) * stride + kw + out_pad - 2 * pad;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            for iy in 0..h {
                for ix in 0..w {
                    let xv = x.data()[((b * c + ch) * h + iy) * w + ix];
                    for o in 0..f {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (iy * stride + ky) as isize - pad as isize;
                                let xx = (ix * stride + kx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                let kv = k.data()[((ch * f + o) * kh + ky) * kw + kx];
                                out[((b * f + o) * oh + y as usize) * ow + xx as usize] += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    (vec![n, f, oh, ow], out)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn conv2d_matches_loop_oracle_bitwise() {
    for seed in 0..30u64 {
        let mut r = SeededRng::new(seed);
        let n = 1 + seed as usize % 2;
        let c = 1 + seed as usize % 3;
        let h = 3 + seed as usize % 6;
        let w = 4 + (seed as usize / 2) % 5;
        let kh = 1 + seed as usize % 3;
        let kw = 1 + (seed as usize / 3) % 3;
        let stride = 1 + seed as usize % 2;
        let pad = seed as usize % 3;
        let x: Tensor<f64> = r.gaussian(&[n, c, h, w]);
        let k: Tensor<f64> = r.gaussian(&[2, c, kh, kw]);
        let y = x.conv2d(&k, stride, pad).unwrap();
        let (shape, want) = conv_oracle(&x, &k, stride, pad);
        assert_eq!(y.shape(), shape.as_slice());
        assert_eq!(bits(y.data()), bits(&want), "seed {seed}");
    }
    // Largest declared case.
    let mut r = SeededRng::new(1234);
    let x: Tensor<f64> = r.gaussian(&[2, 3, 8, 8]);
    let k: Tensor<f64> = r.gaussian(&[4, 3, 5, 5]);
    let (_, want) = conv_oracle(&x, &k, 2, 2);
    assert_eq!(bits(x.conv2d(&k, 2, 2).unwrap().data()), bits(&want));
}

#[test]
fn conv2d_f32_close_to_oracle() {
    let mut r = SeededRng::new(5);
    let x: Tensor<f64> = r.gaussian(&[2, 3, 8, 8]);
    let k: Tensor<f64> = r.gaussian(&[4, 3, 5, 5]);
    let (_, want) = conv_oracle(&x, &k, 2, 2);
    let y = x.cast::<f32>().conv2d(&k.cast::<f32>(), 2, 2).unwrap();
    for (a, b) in y.data().iter().zip(&want) {
        assert!((*a as f64 - b).abs() < 1e-4);
    }
}

#[test]
fn one_by_one_kernel_is_per_pixel_linear_map() {
    let mut r = SeededRng::new(3);
    let x: Tensor<f64> = r.gaussian(&[1, 2, 4, 5]);
    let k = Tensor::<f64>::from_vec(vec![2.0, -1.0], &[1, 2, 1, 1]).unwrap();
    let y = x.conv2d(&k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 4, 5]);
    for i in 0..20 {
        assert_eq!(y.data()[i], 2.0 * x.data()[i] + (-1.0) * x.data()[20 + i]);
    }
}

#[test]
fn deconv2d_matches_scatter_oracle() {
    for seed in 0..20u64 {
        let mut r = SeededRng::new(seed);
        let stride = 1 + seed as usize % 2;
        let pad = seed as usize % 2;
        let out_pad = if stride == 2 { (seed as usize / 2) % 2 } else { 0 };
        let x: Tensor<f64> = r.gaussian(&[2, 3, 3, 4]);
        let k: Tensor<f64> = r.gaussian(&[3, 2, 3, 3]);
        let y = x.deconv2d(&k, stride, pad, out_pad).unwrap();
        let (shape, want) = deconv_oracle(&x, &k, stride, pad, out_pad);
        assert_eq!(y.shape(), shape.as_slice());
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn stride_one_deconv_is_full_correlation_with_flipped_kernel() {
    let mut r = SeededRng::new(11);
    let (kh, kw) = (3, 2);
    let x: Tensor<f64> = r.gaussian(&[1, 2, 4, 5]);
    let k: Tensor<f64> = r.gaussian(&[2, 3, kh, kw]); // [C_in, F_out, kh, kw]
    // pad = kh - 1 on the deconv is the identity "full" geometry when paired
    // with the conv below; use the raw full transposed conv (pad 0) and
    // compare with a conv over an input padded by (k - 1) using a flipped,
    // channel-swapped kernel.
    let y = x.deconv2d(&k, 1, 0, 0).unwrap();
    let mut flipped = vec![0.0; k.numel()];
    for ci in 0..2 {
        for fo in 0..3 {
            for ky in 0..kh {
                for kx in 0..kw {
                    flipped[((fo * 2 + ci) * kh + (kh - 1 - ky)) * kw + (kw - 1 - kx)] =
                        k.data()[((ci * 3 + fo) * kh + ky) * kw + kx];
                }
            }
        }
    }
    let kf = Tensor::from_vec(flipped, &[3, 2, kh, kw]).unwrap();
    // Full correlation needs asymmetric padding kh-1 / kw-1; build it explicitly.
    let (h, w) = (4, 5);
    let (ph, pw) = (h + 2 * (kh - 1), w + 2 * (kw - 1));
    let mut padded = vec![0.0; 2 * ph * pw];
    for c in 0..2 {
        for i in 0..h {
            for j in 0..w {
                padded[(c * ph + i + kh - 1) * pw + j + kw - 1] = x.data()[(c * h + i) * w + j];
            }
        }
    }
    let xp = Tensor::from_vec(padded, &[1, 2, ph, pw]).unwrap();
    let (shape, want) = conv_oracle(&xp, &kf, 1, 0);
    assert_eq!(y.shape(), shape.as_slice());
    for (a, b) in y.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    // With a square kernel, deconv pad p = k-1 applied as conv padding gives
    // the same result as conv2d(pad = k-1) with the flipped kernel.
    let ks: Tensor<f64> = r.gaussian(&[2, 3, 3, 3]);
    let y_full = x.deconv2d(&ks, 1, 0, 0).unwrap();
    let mut fl = vec![0.0; ks.numel()];
    for ci in 0..2 {
        for fo in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    fl[((fo * 2 + ci) * 3 + 2 - ky) * 3 + 2 - kx] = ks.data()[((ci * 3 + fo) * 3 + ky) * 3 + kx];
                }
            }
        }
    }
    let ksf = Tensor::from_vec(fl, &[3, 2, 3, 3]).unwrap();
    let y_conv = x.conv2d(&ksf, 1, 2).unwrap();
    assert_eq!(y_full.shape(), y_conv.shape());
    assert!(y_full.max_abs_diff(&y_conv).unwrap() < 1e-12);
}

#[test]
fn deconv_forward_is_conv_input_gradient() {
    for seed in 0..10u64 {
        let mut r = SeededRng::new(seed);
        let (stride, pad) = (1 + seed as usize % 2, seed as usize % 2);
        // Conv maps 2 -> 3 channels over a 4x4 image (stride 2 pad 1 -> 2x2).
        let x = Tensor::<f64>::param(r.gaussian_vec(2 * 2 * 4 * 4, 0.0, 1.0), &[2, 2, 4, 4]).unwrap();
        let k: Tensor<f64> = r.gaussian(&[3, 2, 3, 3]);
        let y = x.conv2d(&k, stride, pad).unwrap();
        let upstream: Tensor<f64> = r.gaussian(y.shape());
        let grads = y.mul(&upstream).unwrap().sum_all().backward().unwrap();
        let gx = grads.wrt(&x);

        let (oh, h) = (y.dim(2), 4);
        let out_pad = h - ((oh - 1) * stride + 3 - 2 * pad);
        let d = upstream.deconv2d(&k, stride, pad, out_pad).unwrap();
        assert_eq!(d.shape(), x.shape());
        assert_eq!(bits(d.data()), bits(&gx), "seed {seed}");
    }
}

#[test]
fn deconv_duality_by_finite_differences() {
    // <deconv(y), x> == <y, conv(x)> for the 1x1x4x4 case, checked numerically:
    // the input gradient of x -> <y, conv(x)> is deconv(y).
    let mut r = SeededRng::new(77);
    let x: Tensor<f64> = r.gaussian(&[1, 1, 4, 4]);
    let k: Tensor<f64> = r.gaussian(&[1, 1, 3, 3]);
    let y: Tensor<f64> = r.gaussian(&[1, 1, 2, 2]);
    let numeric = lrsim_tensor::gradcheck::numerical_gradients(
        |a| a[0].conv2d(&k, 2, 1).unwrap().mul(&y).unwrap().sum_all().item().unwrap(),
        &[x],
        1e-4,
    );
    let d = y.deconv2d(&k, 2, 1, 1).unwrap();
    assert!(lrsim_tensor::gradcheck::max_relative_error(d.data(), &numeric[0], 1e-8) < 1e-6);
}
