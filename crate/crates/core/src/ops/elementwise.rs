use rand::Rng;

use crate::error::TensorError;
use crate::ops::Mode;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_inplace<T: Scalar>(x: &mut Tensor4<T>) {
    x.data_mut().iter_mut().for_each(|v| {
        if *v <= T::zero() {
            *v = T::zero()
        }
    });
}

/// Gradient of relu given its forward *output* (positive exactly where the input was).
pub fn relu_backward<T: Scalar>(y: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>, TensorError> {
    same_shape("relu_backward", y.shape(), grad_out.shape())?;
    let mut g = grad_out.clone();
    g.data_mut().iter_mut().zip(y.data()).for_each(|(g, &y)| {
        if y <= T::zero() {
            *g = T::zero()
        }
    });
    Ok(g)
}

pub(crate) fn same_shape(op: &'static str, a: Shape4, b: Shape4) -> Result<(), TensorError> {
    for (dim, x, y) in [("batch", a.n, b.n), ("channels", a.c, b.c), ("height", a.h, b.h), ("width", a.w, b.w)] {
        if x != y {
            return Err(TensorError::DimMismatch { op, dim, expected: x, got: y });
        }
    }
    Ok(())
}

pub fn add<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>, TensorError> {
    same_shape("add", a.shape(), b.shape())?;
    let mut out = a.clone();
    out.data_mut().iter_mut().zip(b.data()).for_each(|(o, &v)| *o += v);
    Ok(out)
}

pub(crate) fn add_assign<T: Scalar>(a: &mut Tensor4<T>, b: &Tensor4<T>) -> Result<(), TensorError> {
    same_shape("add", a.shape(), b.shape())?;
    a.data_mut().iter_mut().zip(b.data()).for_each(|(o, &v)| *o += v);
    Ok(())
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>, TensorError> {
    let (sa, sb) = (a.shape(), b.shape());
    for (dim, x, y) in [("batch", sa.n, sb.n), ("height", sa.h, sb.h), ("width", sa.w, sb.w)] {
        if x != y {
            return Err(TensorError::DimMismatch { op: "concat_channels", dim, expected: x, got: y });
        }
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..sa.n {
        data.extend_from_slice(a.item(n));
        data.extend_from_slice(b.item(n));
    }
    Tensor4::new(Shape4::new(sa.n, sa.c + sb.c, sa.h, sa.w), data)
}

/// Inverse of [`concat_channels`]: the first `first` channels, then the rest.
pub fn split_channels<T: Scalar>(x: &Tensor4<T>, first: usize) -> Result<(Tensor4<T>, Tensor4<T>), TensorError> {
    let s = x.shape();
    if first == 0 || first >= s.c {
        return Err(TensorError::invalid(
            "split_channels",
            format!("split point {first} must lie strictly inside 0..{}", s.c),
        ));
    }
    let (la, lb) = (first * s.plane(), (s.c - first) * s.plane());
    let mut a = Vec::with_capacity(s.n * la);
    let mut b = Vec::with_capacity(s.n * lb);
    for n in 0..s.n {
        let item = x.item(n);
        a.extend_from_slice(&item[..la]);
        b.extend_from_slice(&item[la..]);
    }
    Ok((
        Tensor4::new(Shape4::new(s.n, first, s.h, s.w), a)?,
        Tensor4::new(Shape4::new(s.n, s.c - first, s.h, s.w), b)?,
    ))
}

/// Per-element survivor scale (0 or 1/(1-rate)) from a train-mode dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T> {
    scale: Vec<T>,
}

/// Inverted dropout. Eval mode and `rate == 0` are exact identities and draw nothing.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor4<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor4<T>, Option<DropoutMask<T>>), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::invalid("dropout", format!("rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::from_acc(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&scale).for_each(|(v, &s)| *v *= s);
    Ok((y, Some(DropoutMask { scale })))
}

pub fn dropout_backward<T: Scalar>(
    mask: Option<&DropoutMask<T>>,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>, TensorError> {
    let Some(mask) = mask else {
        return Ok(grad_out.clone());
    };
    if mask.scale.len() != grad_out.len() {
        return Err(TensorError::DimMismatch {
            op: "dropout_backward",
            dim: "elements",
            expected: mask.scale.len(),
            got: grad_out.len(),
        });
    }
    let mut g = grad_out.clone();
    g.data_mut().iter_mut().zip(&mask.scale).for_each(|(v, &s)| *v *= s);
    Ok(g)
}
