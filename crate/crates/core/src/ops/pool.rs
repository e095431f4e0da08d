//! 2x2 / stride-2 max pooling. Odd extents are padded with negative infinity.

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Linear input offset of the winning element for every pooled output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaxPoolIndices {
    pub input: Shape4,
    pub argmax: Vec<usize>,
}

pub fn maxpool2d_forward<T: Scalar>(x: &Tensor4<T>) -> (Tensor4<T>, MaxPoolIndices) {
    let s = x.shape();
    let (oh, ow) = (s.h.div_ceil(2), s.w.div_ceil(2));
    let out_shape = Shape4::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    let data = x.data();
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = usize::MAX;
                // row-major scan with strict '>' keeps the lowest index on ties
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (iy, ix) = (2 * oy + dy, 2 * ox + dx);
                        if iy < s.h && ix < s.w {
                            let i = base + iy * s.w + ix;
                            if best_i == usize::MAX || data[i] > best {
                                best = data[i];
                                best_i = i;
                            }
                        }
                    }
                }
                out.push(best);
                argmax.push(best_i);
            }
        }
    }
    (
        Tensor4::new(out_shape, out).expect("pool shape"),
        MaxPoolIndices { input: s, argmax },
    )
}

/// Routes each output gradient to its recorded argmax.
pub fn maxpool2d_backward<T: Scalar>(
    indices: &MaxPoolIndices,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>, TensorError> {
    if grad_out.len() != indices.argmax.len() {
        return Err(TensorError::DimMismatch {
            op: "maxpool2d_backward",
            dim: "elements",
            expected: indices.argmax.len(),
            got: grad_out.len(),
        });
    }
    let mut gx = Tensor4::zeros_unchecked(indices.input);
    let gd = gx.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gd[i] += g;
    }
    Ok(gx)
}
