use crate::element::Element;
use crate::error::{shape_err, Result, TensorError};
use crate::tensor::Tensor;

/// Right-aligned broadcast of two shapes; a dimension broadcasts when one
/// side has extent 1 (or is missing).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return shape_err(format!("cannot broadcast {a:?} with {b:?}")),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out`, zero along broadcast dimensions.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output index with the matching flat offsets into `a` and `b`.
fn for_each_pair(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

type BinFwd<T> = fn(T, T) -> T;
/// (a, b, grad_out) -> partial contribution.
type BinBwd<T> = fn(T, T, T) -> T;

fn binary<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    name: &'static str,
    f: BinFwd<T>,
    da: BinBwd<T>,
    db: BinBwd<T>,
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<T> = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        let mut data = vec![T::zero(); out_shape.iter().product()];
        for_each_pair(&out_shape, &sa, &sb, |o, i, j| data[o] = f(ad[i], bd[j]));
        data
    };
    let (ac, bc) = (a.clone(), b.clone());
    let shape_out = out_shape.clone();
    Ok(Tensor::from_op(
        data,
        out_shape,
        name,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            let (ad, bd) = (ac.data(), bc.data());
            let mut ga = ac.requires_grad().then(|| vec![T::zero(); ac.numel()]);
            let mut gb = bc.requires_grad().then(|| vec![T::zero(); bc.numel()]);
            let sa = broadcast_strides(ac.shape(), &shape_out);
            let sb = broadcast_strides(bc.shape(), &shape_out);
            for_each_pair(&shape_out, &sa, &sb, |o, i, j| {
                if let Some(ga) = ga.as_mut() {
                    ga[i] = ga[i] + da(ad[i], bd[j], g[o]);
                }
                if let Some(gb) = gb.as_mut() {
                    gb[j] = gb[j] + db(ad[i], bd[j], g[o]);
                }
            });
            vec![ga, gb]
        }),
    ))
}

/// (x, y, grad_out) -> grad_in.
type UnBwd<T> = Box<dyn Fn(T, T, T) -> T + Send + Sync>;

fn unary<T: Element>(x: &Tensor<T>, name: &'static str, f: impl Fn(T) -> T, df: UnBwd<T>) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        name,
        vec![x.clone()],
        Box::new(move |g, y| {
            let xd = xc.data();
            vec![Some((0..g.len()).map(|i| df(xd[i], y[i], g[i])).collect())]
        }),
    )
}

/// How `log` treats non-positive inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogMode {
    /// Non-positive values map to `-inf`.
    Lenient,
    /// Non-positive values are a domain error.
    Strict,
}

fn stable_sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, "add", |a, b| a + b, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, "sub", |a, b| a - b, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, "mul", |a, b| a * b, |_, b, g| g * b, |a, _, g| g * a)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, "div", |a, b| a / b, |_, b, g| g / b, |a, b, g| -g * a / (b * b))
    }

    pub fn neg(&self) -> Tensor<T> {
        unary(self, "neg", |v| -v, Box::new(|_, _, g| -g))
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, "exp", |v| v.exp(), Box::new(|_, y, g| g * y))
    }

    /// Natural log; non-positive inputs give `-inf`.
    pub fn log(&self) -> Tensor<T> {
        unary(
            self,
            "log",
            |v| if v > T::zero() { v.ln() } else { T::neg_infinity() },
            Box::new(|x, _, g| g / x),
        )
    }

    pub fn log_with(&self, mode: LogMode) -> Result<Tensor<T>> {
        if mode == LogMode::Strict {
            if let Some(bad) = self.data().iter().find(|v| !(**v > T::zero())) {
                return Err(TensorError::Domain(format!("log of non-positive value {bad}")));
            }
        }
        Ok(self.log())
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&self, floor: T) -> Tensor<T> {
        unary(
            self,
            "log_clamped",
            move |v| if v > floor { v.ln() } else { floor.ln() },
            Box::new(move |x, _, g| if x > floor { g / x } else { T::zero() }),
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        unary(
            self,
            "relu",
            |v| if v < T::zero() { T::zero() } else { v },
            Box::new(|x, _, g| if x > T::zero() { g } else { T::zero() }),
        )
    }

    pub fn leaky_relu(&self, alpha: T) -> Tensor<T> {
        unary(
            self,
            "leaky_relu",
            move |v| if v > T::zero() { v } else { alpha * v },
            Box::new(move |x, _, g| if x > T::zero() { g } else { alpha * g }),
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        unary(self, "tanh", |v| v.tanh(), Box::new(|_, y, g| g * (T::one() - y * y)))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(self, "sigmoid", stable_sigmoid, Box::new(|_, y, g| g * y * (T::one() - y)))
    }

    pub fn square(&self) -> Tensor<T> {
        let two = T::one() + T::one();
        unary(self, "square", |v| v * v, Box::new(move |x, _, g| g * two * x))
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        unary(self, "scale", move |v| v * c, Box::new(move |_, _, g| g * c))
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        unary(self, "add_scalar", move |v| v + c, Box::new(|_, _, g| g))
    }
}
