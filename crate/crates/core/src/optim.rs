//! Bias-corrected Adam.

use crate::error::TensorError;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `lens`, with the usual 0.9 / 0.999 / 1e-8 constants.
    pub fn new(lens: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<T>> = lens.into_iter().map(|l| vec![T::zero(); l]).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update over every parameter group. Increments `state.t` once.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::DimMismatch {
            op: "adam_step",
            dim: "parameter groups",
            expected: state.m.len(),
            got: if params.len() != state.m.len() { params.len() } else { grads.len() },
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(TensorError::DimMismatch {
                op: "adam_step",
                dim: "parameter length",
                expected: state.m[i].len(),
                got: if p.len() != state.m[i].len() { p.len() } else { g.len() },
            });
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for j in 0..p.len() {
            let gj = g[j].acc();
            let mj = b1 * m[j].acc() + (1.0 - b1) * gj;
            let vj = b2 * v[j].acc() + (1.0 - b2) * gj * gj;
            m[j] = T::from_acc(mj);
            v[j] = T::from_acc(vj);
            let step = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
            p[j] = T::from_acc(p[j].acc() - step);
        }
    }
    Ok(())
}
