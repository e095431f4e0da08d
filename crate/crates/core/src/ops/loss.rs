use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::{LabelMap, Tensor4};

/// Mean per-pixel softmax cross-entropy and its gradient with respect to the logits.
///
/// The gradient is `(softmax - onehot) / (n*h*w)`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor4<T>,
    target: &LabelMap,
) -> Result<(f64, Tensor4<T>), TensorError> {
    let s = logits.shape();
    for (dim, e, g) in [("batch", s.n, target.n), ("height", s.h, target.h), ("width", s.w, target.w)] {
        if e != g {
            return Err(TensorError::DimMismatch {
                op: "softmax_cross_entropy",
                dim,
                expected: e,
                got: g,
            });
        }
    }
    let k = s.c;
    let pixels = s.n * s.plane();
    let inv = 1.0 / pixels as f64;
    let mut grad = Tensor4::zeros_unchecked(s);
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; k];
    for n in 0..s.n {
        for p in 0..s.plane() {
            let t = target.data[n * s.plane() + p] as usize;
            if t >= k {
                return Err(TensorError::TargetOutOfRange {
                    op: "softmax_cross_entropy",
                    class: t,
                    index: n * s.plane() + p,
                    classes: k,
                });
            }
            let at = |c: usize| (n * k + c) * s.plane() + p;
            let max = (0..k).map(|c| logits.data()[at(c)].acc()).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (logits.data()[at(c)].acc() - max).exp();
                z += *pr;
            }
            total += z.ln() - (logits.data()[at(t)].acc() - max);
            for (c, &pr) in probs.iter().enumerate() {
                let onehot = if c == t { 1.0 } else { 0.0 };
                grad.data_mut()[at(c)] = T::from_acc((pr / z - onehot) * inv);
            }
        }
    }
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor4::<f32>::zeros([2, 2, 3, 3]);
        let target = LabelMap::filled(2, 3, 3, 1);
        let (loss, _) = softmax_cross_entropy(&logits, &target).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_margin_gives_tiny_loss() {
        let logits = Tensor4::<f64>::from_fn([1, 2, 2, 2], |_, c, _, _| if c == 1 { 20.0 } else { 0.0 });
        let (loss, _) = softmax_cross_entropy(&logits, &LabelMap::filled(1, 2, 2, 1)).unwrap();
        assert!(loss < 1e-8);
    }

    #[test]
    fn out_of_range_target_is_rejected() {
        let logits = Tensor4::<f64>::zeros([1, 2, 1, 2]);
        let target = LabelMap::new(1, 1, 2, vec![0, 2]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&logits, &target),
            Err(TensorError::TargetOutOfRange { class: 2, index: 1, .. })
        ));
    }

    #[test]
    fn shift_invariance() {
        let logits = Tensor4::<f64>::from_fn([1, 3, 2, 2], |_, c, h, w| (c as f64 - 1.0) * (h as f64 + 0.5 * w as f64));
        let shifted = Tensor4::from_fn(logits.shape(), |n, c, h, w| logits.at(n, c, h, w) + (h * 2 + w) as f64 * 3.7);
        let target = LabelMap::new(1, 2, 2, vec![0, 1, 2, 1]).unwrap();
        let (a, ga) = softmax_cross_entropy(&logits, &target).unwrap();
        let (b, gb) = softmax_cross_entropy(&shifted, &target).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(ga.max_abs_diff(&gb) < 1e-12);
    }
}
