//! Dilated, strided 2-D cross-correlation via chunked im2col + GEMM.

use rayon::prelude::*;

use crate::error::TensorError;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Shape4, Tensor4};

/// Upper bound on elements in one im2col buffer.
const COL_BUDGET: usize = 1 << 21;

/// Geometry of a convolution: square stride/padding/dilation, possibly rectangular kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn new(kernel: usize, stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride,
            padding,
            dilation,
        }
    }

    /// 3x3, stride 1, padding equal to the dilation: preserves spatial size.
    pub const fn same3x3(dilation: usize) -> Self {
        Self::new(3, 1, dilation, dilation)
    }

    /// 1x1 pointwise projection.
    pub const fn pointwise() -> Self {
        Self::new(1, 1, 0, 1)
    }

    /// Pixel span of the dilated kernel along each axis.
    pub fn effective_kernel(&self) -> (usize, usize) {
        let d = self.dilation;
        (
            self.kernel.0 + (self.kernel.0 - 1) * (d - 1),
            self.kernel.1 + (self.kernel.1 - 1) * (d - 1),
        )
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be at least 1"));
        }
        if self.dilation == 0 {
            return Err(TensorError::invalid("conv2d", "dilation must be at least 1"));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(TensorError::invalid("conv2d", "kernel must be at least 1x1"));
        }
        Ok(())
    }

    fn out_dim(&self, input: usize, kernel: usize, dim: &'static str) -> Result<usize, TensorError> {
        let span = (self.dilation * (kernel - 1) + 1) as i64;
        let padded = input as i64 + 2 * self.padding as i64;
        let size = if padded < span {
            0
        } else {
            (padded - span) / self.stride as i64 + 1
        };
        if size < 1 {
            return Err(TensorError::EmptyOutput {
                op: "conv2d",
                dim,
                size: (padded - span).div_euclid(self.stride as i64) + 1,
            });
        }
        Ok(size as usize)
    }

    /// Output `(h', w')` for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize), TensorError> {
        self.validate()?;
        Ok((
            self.out_dim(h, self.kernel.0, "height")?,
            self.out_dim(w, self.kernel.1, "width")?,
        ))
    }
}

/// Precomputed index geometry for one (input, weight, spec) triple.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    in_c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
    dil: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn chunk(&self) -> usize {
        (COL_BUDGET / self.k()).clamp(1, self.out_plane())
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Fills `col` (K rows x `len` columns) for output positions `p0..p0+len`.
    fn im2col<T: Scalar>(&self, x: &[T], p0: usize, len: usize, col: &mut [T]) {
        let (h, w) = (self.h as isize, self.w as isize);
        let mut row = 0;
        for ci in 0..self.in_c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst = &mut col[row * len..(row + 1) * len];
                    let dy = (ki * self.dil) as isize - self.pad as isize;
                    let dx = (kj * self.dil) as isize - self.pad as isize;
                    let (mut oy, mut ox) = (p0 / self.ow, p0 % self.ow);
                    for d in dst.iter_mut() {
                        let iy = (oy * self.stride) as isize + dy;
                        let ix = (ox * self.stride) as isize + dx;
                        *d = if iy >= 0 && iy < h && ix >= 0 && ix < w {
                            plane[(iy * w + ix) as usize]
                        } else {
                            T::zero()
                        };
                        ox += 1;
                        if ox == self.ow {
                            ox = 0;
                            oy += 1;
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-adds `col` back into the input-shaped gradient `gx`.
    fn col2im<T: Scalar>(&self, col: &[T], p0: usize, len: usize, gx: &mut [T]) {
        let (h, w) = (self.h as isize, self.w as isize);
        let mut row = 0;
        for ci in 0..self.in_c {
            let plane = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src = &col[row * len..(row + 1) * len];
                    let dy = (ki * self.dil) as isize - self.pad as isize;
                    let dx = (kj * self.dil) as isize - self.pad as isize;
                    let (mut oy, mut ox) = (p0 / self.ow, p0 % self.ow);
                    for &g in src {
                        let iy = (oy * self.stride) as isize + dy;
                        let ix = (ox * self.stride) as isize + dx;
                        if iy >= 0 && iy < h && ix >= 0 && ix < w {
                            plane[(iy * w + ix) as usize] += g;
                        }
                        ox += 1;
                        if ox == self.ow {
                            ox = 0;
                            oy += 1;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn geometry<T: Scalar>(x: Shape4, w: &Tensor4<T>, spec: &ConvSpec) -> Result<Geometry, TensorError> {
    spec.validate()?;
    let ws = w.shape();
    if ws.c != x.c {
        return Err(TensorError::DimMismatch {
            op: "conv2d",
            dim: "input channels",
            expected: ws.c,
            got: x.c,
        });
    }
    if (ws.h, ws.w) != spec.kernel {
        return Err(TensorError::DimMismatch {
            op: "conv2d",
            dim: if ws.h != spec.kernel.0 { "kernel height" } else { "kernel width" },
            expected: if ws.h != spec.kernel.0 { spec.kernel.0 } else { spec.kernel.1 },
            got: if ws.h != spec.kernel.0 { ws.h } else { ws.w },
        });
    }
    let (oh, ow) = spec.output_hw(x.h, x.w)?;
    Ok(Geometry {
        in_c: x.c,
        h: x.h,
        w: x.w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        oh,
        ow,
        stride: spec.stride,
        pad: spec.padding,
        dil: spec.dilation,
    })
}

/// Cross-correlation of `x` with `w` (`[out_c, in_c, kh, kw]`) plus per-channel bias.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    b: &[T],
    spec: &ConvSpec,
) -> Result<Tensor4<T>, TensorError> {
    let g = geometry(x.shape(), w, spec)?;
    let out_c = w.shape().n;
    if b.len() != out_c {
        return Err(TensorError::DimMismatch {
            op: "conv2d",
            dim: "bias length",
            expected: out_c,
            got: b.len(),
        });
    }
    let n = x.shape().n;
    let out_shape = Shape4::new(n, out_c, g.oh, g.ow);
    let mut out = Tensor4::zeros_unchecked(out_shape);
    let plane = g.out_plane();
    let k = g.k();
    let wmat = MatRef::row_major(w.data(), out_c, k, k);

    out.data_mut()
        .par_chunks_mut(out_shape.item())
        .enumerate()
        .for_each(|(i, dst)| {
            let xi = x.item(i);
            if g.is_pointwise() {
                gemm(T::one(), wmat, MatRef::row_major(xi, k, plane, plane), T::zero(), dst, plane);
            } else {
                let chunk = g.chunk();
                let mut col = vec![T::zero(); k * chunk];
                let mut p0 = 0;
                while p0 < plane {
                    let len = chunk.min(plane - p0);
                    g.im2col(xi, p0, len, &mut col);
                    gemm(
                        T::one(),
                        wmat,
                        MatRef::row_major(&col, k, len, len),
                        T::zero(),
                        &mut dst[p0..],
                        plane,
                    );
                    p0 += len;
                }
            }
            for (o, &bo) in b.iter().enumerate() {
                if bo != T::zero() {
                    dst[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += bo);
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub struct ConvGrads<T> {
    pub x: Tensor4<T>,
    pub w: Tensor4<T>,
    pub b: Vec<T>,
}

/// Exact reverse-mode gradients of the convolution given `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    spec: &ConvSpec,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>, TensorError> {
    let g = geometry(x.shape(), w, spec)?;
    let out_c = w.shape().n;
    let expected = Shape4::new(x.shape().n, out_c, g.oh, g.ow);
    let gs = grad_out.shape();
    for (dim, e, got) in [
        ("batch", expected.n, gs.n),
        ("channels", expected.c, gs.c),
        ("height", expected.h, gs.h),
        ("width", expected.w, gs.w),
    ] {
        if e != got {
            return Err(TensorError::DimMismatch {
                op: "conv2d_backward",
                dim,
                expected: e,
                got,
            });
        }
    }
    let plane = g.out_plane();
    let k = g.k();
    let wt = MatRef::transposed(w.data(), k, out_c, k);

    // per-item (grad_x, grad_w) so the batch reduction order is fixed
    let mut grad_x = Tensor4::zeros_unchecked(x.shape());
    let partial_w: Vec<Vec<T>> = grad_x
        .data_mut()
        .par_chunks_mut(x.shape().item())
        .enumerate()
        .map(|(i, gx)| {
            let xi = x.item(i);
            let go = grad_out.item(i);
            let mut gw = vec![T::zero(); out_c * k];
            if g.is_pointwise() {
                let gom = MatRef::row_major(go, out_c, plane, plane);
                gemm(T::one(), gom, MatRef::transposed(xi, plane, k, plane), T::zero(), &mut gw, k);
                gemm(T::one(), wt, gom, T::zero(), gx, plane);
            } else {
                let chunk = g.chunk();
                let mut col = vec![T::zero(); k * chunk];
                let mut gcol = vec![T::zero(); k * chunk];
                let mut p0 = 0;
                while p0 < plane {
                    let len = chunk.min(plane - p0);
                    g.im2col(xi, p0, len, &mut col);
                    let gom = MatRef::row_major(&go[p0..], out_c, len, plane);
                    gemm(T::one(), gom, MatRef::transposed(&col, len, k, len), T::one(), &mut gw, k);
                    gemm(T::one(), wt, gom, T::zero(), &mut gcol, len);
                    g.col2im(&gcol, p0, len, gx);
                    p0 += len;
                }
            }
            gw
        })
        .collect();

    let mut gw = vec![T::zero(); out_c * k];
    for part in &partial_w {
        gw.iter_mut().zip(part).for_each(|(a, &b)| *a += b);
    }
    let mut gb = vec![T::zero(); out_c];
    for (o, slot) in gb.iter_mut().enumerate() {
        let mut s = 0.0f64;
        for i in 0..gs.n {
            s += grad_out.plane(i, o).iter().map(|v| v.acc()).sum::<f64>();
        }
        *slot = T::from_acc(s);
    }
    Ok(ConvGrads {
        x: grad_x,
        w: Tensor4::new(w.shape(), gw)?,
        b: gb,
    })
}
