//! Bilinear upsampling by an integer factor, half-pixel centers (align-corners off).

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Source taps for one output coordinate: `(i0, i1, w0, w1)`.
fn axis_taps(input: usize, factor: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..input * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = src - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

fn check_factor(factor: usize) -> Result<(), TensorError> {
    if factor < 1 {
        return Err(TensorError::invalid("bilinear_upsample", "factor must be at least 1"));
    }
    Ok(())
}

pub fn bilinear_upsample<T: Scalar>(x: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>, TensorError> {
    check_factor(factor)?;
    let s = x.shape();
    let out_shape = Shape4::new(s.n, s.c, s.h * factor, s.w * factor);
    let ty = axis_taps(s.h, factor);
    let tx = axis_taps(s.w, factor);
    let mut out = Vec::with_capacity(out_shape.numel());
    for nc in 0..s.n * s.c {
        let src = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
        for &(y0, y1, wy0, wy1) in &ty {
            let (r0, r1) = (&src[y0 * s.w..(y0 + 1) * s.w], &src[y1 * s.w..(y1 + 1) * s.w]);
            for &(x0, x1, wx0, wx1) in &tx {
                let top = r0[x0].acc() * wx0 + r0[x1].acc() * wx1;
                let bot = r1[x0].acc() * wx0 + r1[x1].acc() * wx1;
                out.push(T::from_acc(top * wy0 + bot * wy1));
            }
        }
    }
    Tensor4::new(out_shape, out)
}

/// Transpose of the interpolation map.
pub fn bilinear_upsample_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input: Shape4,
    factor: usize,
) -> Result<Tensor4<T>, TensorError> {
    check_factor(factor)?;
    let gs = grad_out.shape();
    if gs != Shape4::new(input.n, input.c, input.h * factor, input.w * factor) {
        return Err(TensorError::DimMismatch {
            op: "bilinear_upsample_backward",
            dim: if gs.h != input.h * factor { "height" } else { "width" },
            expected: if gs.h != input.h * factor { input.h * factor } else { input.w * factor },
            got: if gs.h != input.h * factor { gs.h } else { gs.w },
        });
    }
    let ty = axis_taps(input.h, factor);
    let tx = axis_taps(input.w, factor);
    let mut acc = vec![0.0f64; input.plane()];
    let mut gx = Tensor4::zeros_unchecked(input);
    for nc in 0..input.n * input.c {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let g = &grad_out.data()[nc * gs.plane()..(nc + 1) * gs.plane()];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let row = &g[oy * gs.w..(oy + 1) * gs.w];
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let v = row[ox].acc();
                acc[y0 * input.w + x0] += v * wy0 * wx0;
                acc[y0 * input.w + x1] += v * wy0 * wx1;
                acc[y1 * input.w + x0] += v * wy1 * wx0;
                acc[y1 * input.w + x1] += v * wy1 * wx1;
            }
        }
        let dst = &mut gx.data_mut()[nc * input.plane()..(nc + 1) * input.plane()];
        dst.iter_mut().zip(&acc).for_each(|(d, &a)| *d = T::from_acc(a));
    }
    Ok(gx)
}
