//! Scalar abstraction shared by every kernel.
//!
//! Storage is generic over `f32`/`f64`. Reductions that feed statistics
//! (batch norm moments, loss, bias gradients) accumulate in `f64` through
//! [`Scalar::acc`] regardless of the storage type.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type usable in a [`Tensor4`](crate::Tensor4).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Short name used in diagnostics (`"f32"` / `"f64"`).
    const NAME: &'static str;

    /// Widen to the accumulation type.
    fn acc(self) -> f64;

    /// Narrow from the accumulation type.
    fn from_acc(v: f64) -> Self;

    /// Strided matrix product `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    /// All pointers must be valid for the given extents and strides, and `c`
    /// must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn acc(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v as f32
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn acc(self) -> f64 {
        self
    }

    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major-or-transposed view of a dense matrix stored in a slice.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize, rs: usize) -> Self {
        Self { data, rows, cols, rs, cs: 1 }
    }

    /// The transpose of a row-major `cols x rows` matrix with row stride `rs`.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize, rs: usize) -> Self {
        Self { data, rows, cols, rs: 1, cs: rs }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `out = alpha * a * b + beta * out`, where `out` is row-major with row stride `rs_out`.
pub(crate) fn gemm<T: Scalar>(
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    out: &mut [T],
    rs_out: usize,
) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.max_offset() < a.data.len() || k == 0);
    assert!(b.max_offset() < b.data.len() || k == 0);
    assert!((m - 1) * rs_out + n <= out.len(), "gemm output extent");
    // SAFETY: extents checked above; `out` is uniquely borrowed so it cannot alias the inputs.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            rs_out as isize,
            1,
        );
    }
}

/// Converts an `f64` literal into `T`.
#[inline(always)]
pub fn lit<T: Scalar>(v: f64) -> T {
    T::from_acc(v)
}
