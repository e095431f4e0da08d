//! Per-channel batch normalization over (n, h, w).

use crate::error::TensorError;
use crate::ops::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Learned affine parameters plus running statistics for one normalized channel set.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Scalar> BatchNormState<T> {
    /// Scale 1, shift 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

/// Saved normalized activations for the train-mode backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Tensor4<T>,
    inv_std: Vec<f64>,
}

pub struct BatchNormGrads<T> {
    pub x: Tensor4<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

fn check_channels<T: Scalar>(x: &Tensor4<T>, state: &BatchNormState<T>) -> Result<(), TensorError> {
    if x.shape().c != state.channels() {
        return Err(TensorError::DimMismatch {
            op: "batchnorm",
            dim: "channels",
            expected: state.channels(),
            got: x.shape().c,
        });
    }
    Ok(())
}

/// Train mode normalizes with batch statistics and updates the running estimates;
/// eval mode uses the running estimates and returns no cache.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor4<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, Option<BatchNormCache<T>>), TensorError> {
    check_channels(x, state)?;
    match mode {
        Mode::Eval => Ok((batchnorm_eval(x, state)?, None)),
        Mode::Train => {
            let s = x.shape();
            let count = (s.n * s.plane()) as f64;
            let mut y = x.clone();
            let mut xhat = x.clone();
            let mut inv_std = Vec::with_capacity(s.c);
            for c in 0..s.c {
                let mut sum = 0.0;
                for n in 0..s.n {
                    sum += x.plane(n, c).iter().map(|v| v.acc()).sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0;
                for n in 0..s.n {
                    sq += x.plane(n, c).iter().map(|v| (v.acc() - mean).powi(2)).sum::<f64>();
                }
                let var = sq / count;
                let istd = 1.0 / (var + state.epsilon).sqrt();
                let (g, b) = (state.scale[c].acc(), state.shift[c].acc());
                for n in 0..s.n {
                    let off = (n * s.c + c) * s.plane();
                    for i in off..off + s.plane() {
                        let h = (x.data()[i].acc() - mean) * istd;
                        xhat.data_mut()[i] = T::from_acc(h);
                        y.data_mut()[i] = T::from_acc(h * g + b);
                    }
                }
                let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                let m = state.momentum;
                state.running_mean[c] = T::from_acc((1.0 - m) * state.running_mean[c].acc() + m * mean);
                state.running_var[c] = T::from_acc((1.0 - m) * state.running_var[c].acc() + m * unbiased);
                inv_std.push(istd);
            }
            Ok((y, Some(BatchNormCache { xhat, inv_std })))
        }
    }
}

/// Eval-mode normalization; does not touch the state.
pub fn batchnorm_eval<T: Scalar>(x: &Tensor4<T>, state: &BatchNormState<T>) -> Result<Tensor4<T>, TensorError> {
    check_channels(x, state)?;
    let s = x.shape();
    let mut y = x.clone();
    for c in 0..s.c {
        let istd = 1.0 / (state.running_var[c].acc() + state.epsilon).sqrt();
        let a = state.scale[c].acc() * istd;
        let b = state.shift[c].acc() - state.running_mean[c].acc() * a;
        let (a, b) = (T::from_acc(a), T::from_acc(b));
        for n in 0..s.n {
            let off = (n * s.c + c) * s.plane();
            y.data_mut()[off..off + s.plane()].iter_mut().for_each(|v| *v = *v * a + b);
        }
    }
    Ok(y)
}

/// Backward of the train-mode forward.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    state: &BatchNormState<T>,
    grad_out: &Tensor4<T>,
) -> Result<BatchNormGrads<T>, TensorError> {
    let s = cache.xhat.shape();
    if grad_out.shape() != s {
        return Err(TensorError::DimMismatch {
            op: "batchnorm_backward",
            dim: "elements",
            expected: s.numel(),
            got: grad_out.len(),
        });
    }
    let count = (s.n * s.plane()) as f64;
    let mut gx = Tensor4::zeros_unchecked(s);
    let mut gscale = Vec::with_capacity(s.c);
    let mut gshift = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
        for n in 0..s.n {
            for (dy, xh) in grad_out.plane(n, c).iter().zip(cache.xhat.plane(n, c)) {
                sum_dy += dy.acc();
                sum_dy_xhat += dy.acc() * xh.acc();
            }
        }
        gscale.push(T::from_acc(sum_dy_xhat));
        gshift.push(T::from_acc(sum_dy));
        let k = state.scale[c].acc() * cache.inv_std[c] / count;
        for n in 0..s.n {
            let off = (n * s.c + c) * s.plane();
            for i in off..off + s.plane() {
                let dy = grad_out.data()[i].acc();
                let xh = cache.xhat.data()[i].acc();
                gx.data_mut()[i] = T::from_acc(k * (count * dy - sum_dy - xh * sum_dy_xhat));
            }
        }
    }
    Ok(BatchNormGrads {
        x: gx,
        scale: gscale,
        shift: gshift,
    })
}
