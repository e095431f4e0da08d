//! Rank-4 tensors in batch/channel/height/width order.

use std::fmt;

use crate::error::TensorError;
use crate::scalar::Scalar;

/// Extent of a [`Tensor4`]: batch, channels, rows, columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one `h x w` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.dims().contains(&0) {
            Err(TensorError::ZeroDim(self.dims()))
        } else {
            Ok(())
        }
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape4 {
    fn from(d: [usize; 4]) -> Self {
        Shape4::new(d[0], d[1], d[2], d[3])
    }
}

/// Dense rank-4 array, row-major with `w` fastest.
#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(shape: impl Into<Shape4>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                shape: shape.dims(),
                expected: shape.numel(),
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Shape4>, value: T) -> Self {
        let shape = shape.into();
        shape.validate().expect("invalid tensor shape");
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, T::zero())
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` at every index.
    pub fn from_fn(
        shape: impl Into<Shape4>,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let shape = shape.into();
        shape.validate().expect("invalid tensor shape");
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Zero tensor for internal gradient buffers; skips validation.
    pub(crate) fn zeros_unchecked(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.shape.n && c < self.shape.c && h < self.shape.h && w < self.shape.w);
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = v;
    }

    /// One `h x w` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    /// All channels of one batch item.
    pub fn item(&self, n: usize) -> &[T] {
        let s = self.shape.item();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(self, shape: impl Into<Shape4>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    /// Element type conversion.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_acc(v.acc())).collect(),
        }
    }

    /// Stacks single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor4<T>]) -> Result<Self, TensorError> {
        let first = items
            .first()
            .ok_or_else(|| TensorError::invalid("stack", "no tensors to stack"))?
            .shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            for (dim, a, b) in [("channels", first.c, s.c), ("height", first.h, s.h), ("width", first.w, s.w)] {
                if a != b {
                    return Err(TensorError::DimMismatch { op: "stack", dim, expected: a, got: b });
                }
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Self::new(Shape4::new(n, first.c, first.h, first.w), data)
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.acc() - b.acc()).abs())
            .fold(0.0, f64::max)
    }
}

/// Integer class labels in batch/height/width order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self, TensorError> {
        if n == 0 || h == 0 || w == 0 {
            return Err(TensorError::ZeroDim([n, 1, h, w]));
        }
        if data.len() != n * h * w {
            return Err(TensorError::DataLength {
                shape: [n, 1, h, w],
                expected: n * h * w,
                got: data.len(),
            });
        }
        Ok(Self { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, class: u8) -> Self {
        Self { n, h, w, data: vec![class; n * h * w] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, h: usize, w: usize) -> u8 {
        self.data[(n * self.h + h) * self.w + w]
    }

    pub fn item(&self, n: usize) -> &[u8] {
        let s = self.h * self.w;
        &self.data[n * s..(n + 1) * s]
    }

    pub fn stack(items: &[LabelMap]) -> Result<Self, TensorError> {
        let first = items
            .first()
            .ok_or_else(|| TensorError::invalid("stack", "no label maps to stack"))?;
        let mut data = Vec::new();
        let mut n = 0;
        for m in items {
            if (m.h, m.w) != (first.h, first.w) {
                return Err(TensorError::DimMismatch {
                    op: "stack",
                    dim: if m.h != first.h { "height" } else { "width" },
                    expected: if m.h != first.h { first.h } else { first.w },
                    got: if m.h != first.h { m.h } else { m.w },
                });
            }
            n += m.n;
            data.extend_from_slice(&m.data);
        }
        Self::new(n, first.h, first.w, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_zero_dims() {
        assert!(matches!(
            Tensor4::<f32>::new([1, 1, 2, 2], vec![0.0; 3]),
            Err(TensorError::DataLength { expected: 4, got: 3, .. })
        ));
        assert!(matches!(
            Tensor4::<f32>::new([1, 0, 2, 2], vec![]),
            Err(TensorError::ZeroDim(_))
        ));
    }

    #[test]
    fn offsets_are_row_major_w_fastest() {
        let t = Tensor4::<f64>::from_fn([2, 3, 4, 5], |n, c, h, w| (n * 1000 + c * 100 + h * 10 + w) as f64);
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[5], 10.0);
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.plane(1, 2)[0], 1200.0);
    }

    #[test]
    fn stack_concatenates_batches() {
        let a = Tensor4::<f32>::full([1, 2, 2, 2], 1.0);
        let b = Tensor4::<f32>::full([2, 2, 2, 2], 2.0);
        let s = Tensor4::stack(&[a, b]).unwrap();
        assert_eq!(s.shape(), Shape4::new(3, 2, 2, 2));
        assert_eq!(s.at(2, 1, 1, 1), 2.0);
        let c = Tensor4::<f32>::full([1, 3, 2, 2], 0.0);
        assert!(Tensor4::stack(&[s, c]).is_err());
    }
}
