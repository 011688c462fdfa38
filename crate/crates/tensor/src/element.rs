use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Storage type tag, used by checkpoint containers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Row/column strides of a matrix view, in elements.
#[derive(Debug, Clone, Copy)]
pub struct Strides {
    pub row: isize,
    pub col: isize,
}

impl Strides {
    pub const fn row_major(cols: usize) -> Self {
        Strides { row: cols as isize, col: 1 }
    }

    /// Strides that read a row-major `[rows x cols]` buffer as its transpose.
    pub const fn transposed(cols: usize) -> Self {
        Strides { row: 1, col: cols as isize }
    }

    fn max_offset(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        (rows as isize - 1) as usize * self.row as usize + (cols as isize - 1) as usize * self.col as usize
    }
}

/// Floating-point element of a tensor.
///
/// `f32` is the training type. `f64` exists for gradient checking, and its
/// matrix product is a plain ordered loop so that results match hand-written
/// loop oracles bit for bit.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    /// `c = a·b + beta·c` for an `[m x k]` by `[k x n]` product.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: Strides,
        b: &[Self],
        sb: Strides,
        beta: Self,
        c: &mut [Self],
        sc: Strides,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("float conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float conversion")
    }

    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8>;
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self>;
}

/// Checked matrix product over strided views.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || sa.max_offset(m, k) < a.len(), "gemm: lhs view out of bounds");
    assert!(k == 0 || sb.max_offset(k, n) < b.len(), "gemm: rhs view out of bounds");
    assert!(sc.max_offset(m, n) < c.len(), "gemm: output view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = (i as isize * sc.row + j as isize * sc.col) as usize;
                c[idx] = if beta == T::zero() { T::zero() } else { beta * c[idx] };
            }
        }
        return;
    }
    T::gemm_raw(m, k, n, a, sa, b, sb, beta, c, sc);
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        sa: Strides,
        b: &[f32],
        sb: Strides,
        beta: f32,
        c: &mut [f32],
        sc: Strides,
    ) {
        // SAFETY: `gemm` checked that every view stays inside its slice.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.row,
                sa.col,
                b.as_ptr(),
                sb.row,
                sb.col,
                beta,
                c.as_mut_ptr(),
                sc.row,
                sc.col,
            );
        }
    }

    fn to_le_bytes_vec(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<f32> {
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        sa: Strides,
        b: &[f64],
        sb: Strides,
        beta: f64,
        c: &mut [f64],
        sc: Strides,
    ) {
        // Ordered accumulation over k; no fused multiply-add.
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for p in 0..k {
                    let av = a[(i as isize * sa.row + p as isize * sa.col) as usize];
                    let bv = b[(p as isize * sb.row + j as isize * sb.col) as usize];
                    acc += av * bv;
                }
                let idx = (i as isize * sc.row + j as isize * sc.col) as usize;
                c[idx] = if beta == 0.0 { acc } else { beta * c[idx] + acc };
            }
        }
    }

    fn to_le_bytes_vec(values: &[f64]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<f64> {
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
    }
}
