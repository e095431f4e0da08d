//! Trainable building blocks with explicit forward caches and backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::TensorError;
use crate::ops::elementwise::{add_assign, relu_inplace};
use crate::ops::norm::batchnorm_eval;
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, maxpool2d_backward,
    maxpool2d_forward, relu_backward, BatchNormCache, BatchNormState, ConvSpec, MaxPoolIndices, Mode,
};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Read-only view of one named parameter or buffer.
#[derive(Clone, Copy, Debug)]
pub struct ParamView<'a, T> {
    pub shape: [usize; 4],
    pub data: &'a [T],
}

/// Collects `(name, view)` pairs in canonical order.
pub(crate) type ParamSink<'a, T> = Vec<(String, ParamView<'a, T>)>;
pub(crate) type ParamSinkMut<'a, T> = Vec<(String, &'a mut [T])>;

/// Convolution weight and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub spec: ConvSpec,
}

impl<T: Scalar> Conv2d<T> {
    /// Fan-in scaled normal weights (std = sqrt(2 / fan_in)), zero bias.
    pub fn kaiming<R: Rng + ?Sized>(in_c: usize, out_c: usize, spec: ConvSpec, rng: &mut R) -> Self {
        let (kh, kw) = spec.kernel;
        let fan_in = (in_c * kh * kw) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let weight = Tensor4::from_fn([out_c, in_c, kh, kw], |_, _, _, _| T::from_acc(normal.sample(rng)));
        Self {
            weight,
            bias: vec![T::zero(); out_c],
            spec,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, TensorError> {
        conv2d_forward(x, &self.weight, &self.bias, &self.spec)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut ParamSink<'a, T>) {
        out.push((
            format!("{prefix}.w"),
            ParamView {
                shape: self.weight.shape().dims(),
                data: self.weight.data(),
            },
        ));
        out.push((
            format!("{prefix}.b"),
            ParamView {
                shape: [self.bias.len(), 1, 1, 1],
                data: &self.bias,
            },
        ));
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamSinkMut<'a, T>) {
        out.push((format!("{prefix}.w"), self.weight.data_mut()));
        out.push((format!("{prefix}.b"), &mut self.bias));
    }
}

/// Convolution, optional 2x2 max pool, batch norm, relu.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvUnit<T> {
    pub conv: Conv2d<T>,
    pub pool: bool,
    pub bn: BatchNormState<T>,
}

#[derive(Clone, Debug)]
pub struct ConvUnitCache<T> {
    input: Tensor4<T>,
    pool: Option<MaxPoolIndices>,
    bn: BatchNormCache<T>,
    output: Tensor4<T>,
}

impl<T> ConvUnitCache<T> {
    pub fn output(&self) -> &Tensor4<T> {
        &self.output
    }
}

/// Parameter gradients of a [`ConvUnit`] in canonical order.
#[derive(Clone, Debug)]
pub struct ConvUnitGrads<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

impl<T> ConvUnitGrads<T> {
    pub(crate) fn append_to(self, out: &mut Vec<Vec<T>>) {
        out.extend([self.w, self.b, self.scale, self.shift]);
    }
}

impl<T: Scalar> ConvUnit<T> {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, spec: ConvSpec, pool: bool, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::kaiming(in_c, out_c, spec, rng),
            pool,
            bn: BatchNormState::new(out_c),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, ConvUnitCache<T>), TensorError> {
        let mut y = self.conv.forward(x)?;
        let mut pool = None;
        if self.pool {
            let (p, idx) = maxpool2d_forward(&y);
            y = p;
            pool = Some(idx);
        }
        let (mut z, bn) = batchnorm_forward(&y, &mut self.bn, Mode::Train)?;
        relu_inplace(&mut z);
        let cache = ConvUnitCache {
            input: x.clone(),
            pool,
            bn: bn.expect("train-mode batchnorm returns a cache"),
            output: z.clone(),
        };
        Ok((z, cache))
    }

    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, TensorError> {
        let mut y = self.conv.forward(x)?;
        if self.pool {
            y = maxpool2d_forward(&y).0;
        }
        let mut z = batchnorm_eval(&y, &self.bn)?;
        relu_inplace(&mut z);
        Ok(z)
    }

    pub fn backward(
        &self,
        cache: &ConvUnitCache<T>,
        grad_out: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, ConvUnitGrads<T>), TensorError> {
        let g = relu_backward(&cache.output, grad_out)?;
        let bn = batchnorm_backward(&cache.bn, &self.bn, &g)?;
        let g = match &cache.pool {
            Some(idx) => maxpool2d_backward(idx, &bn.x)?,
            None => bn.x,
        };
        let cg = conv2d_backward(&cache.input, &self.conv.weight, &self.conv.spec, &g)?;
        Ok((
            cg.x,
            ConvUnitGrads {
                w: cg.w.into_data(),
                b: cg.b,
                scale: bn.scale,
                shift: bn.shift,
            },
        ))
    }

    /// Output shape for an input shape.
    pub fn output_shape(&self, input: Shape4) -> Result<Shape4, TensorError> {
        let (mut h, mut w) = self.conv.spec.output_hw(input.h, input.w)?;
        if self.pool {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        Ok(Shape4::new(input.n, self.conv.out_channels(), h, w))
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut ParamSink<'a, T>) {
        self.conv.params(prefix, out);
        let c = self.bn.channels();
        out.push((
            format!("{prefix}.bn.gamma"),
            ParamView { shape: [c, 1, 1, 1], data: &self.bn.scale },
        ));
        out.push((
            format!("{prefix}.bn.beta"),
            ParamView { shape: [c, 1, 1, 1], data: &self.bn.shift },
        ));
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamSinkMut<'a, T>) {
        self.conv.params_mut(prefix, out);
        out.push((format!("{prefix}.bn.gamma"), &mut self.bn.scale));
        out.push((format!("{prefix}.bn.beta"), &mut self.bn.shift));
    }

    pub(crate) fn buffers<'a>(&'a self, prefix: &str, out: &mut ParamSink<'a, T>) {
        let c = self.bn.channels();
        out.push((
            format!("{prefix}.bn.running_mean"),
            ParamView { shape: [c, 1, 1, 1], data: &self.bn.running_mean },
        ));
        out.push((
            format!("{prefix}.bn.running_var"),
            ParamView { shape: [c, 1, 1, 1], data: &self.bn.running_var },
        ));
    }

    pub(crate) fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamSinkMut<'a, T>) {
        out.push((format!("{prefix}.bn.running_mean"), &mut self.bn.running_mean));
        out.push((format!("{prefix}.bn.running_var"), &mut self.bn.running_var));
    }
}

/// Two same-size dilated 3x3 conv units with a residual add of the block input.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBlock<T> {
    pub conv_a: ConvUnit<T>,
    pub conv_b: ConvUnit<T>,
}

#[derive(Clone, Debug)]
pub struct PatchBlockCache<T> {
    a: ConvUnitCache<T>,
    b: ConvUnitCache<T>,
}

impl<T: Scalar> PatchBlock<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, rates: (usize, usize), rng: &mut R) -> Self {
        Self {
            conv_a: ConvUnit::new(channels, channels, ConvSpec::same3x3(rates.0), false, rng),
            conv_b: ConvUnit::new(channels, channels, ConvSpec::same3x3(rates.1), false, rng),
        }
    }

    fn check(&self, x: &Tensor4<T>) -> Result<(), TensorError> {
        let c = self.conv_a.conv.in_channels();
        if x.shape().c != c || self.conv_b.conv.out_channels() != c {
            return Err(TensorError::DimMismatch {
                op: "patch_block",
                dim: "channels",
                expected: c,
                got: if x.shape().c != c { x.shape().c } else { self.conv_b.conv.out_channels() },
            });
        }
        Ok(())
    }

    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, PatchBlockCache<T>), TensorError> {
        self.check(x)?;
        let (ya, a) = self.conv_a.forward_train(x)?;
        let (mut y, b) = self.conv_b.forward_train(&ya)?;
        add_assign(&mut y, x)?;
        Ok((y, PatchBlockCache { a, b }))
    }

    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, TensorError> {
        self.check(x)?;
        let mut y = self.conv_b.forward_eval(&self.conv_a.forward_eval(x)?)?;
        add_assign(&mut y, x)?;
        Ok(y)
    }

    /// Returns the input gradient and `(conv_a, conv_b)` parameter gradients.
    pub fn backward(
        &self,
        cache: &PatchBlockCache<T>,
        grad_out: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, ConvUnitGrads<T>, ConvUnitGrads<T>), TensorError> {
        let (ga, gb) = self.conv_b.backward(&cache.b, grad_out)?;
        let (mut gx, gai) = self.conv_a.backward(&cache.a, &ga)?;
        add_assign(&mut gx, grad_out)?;
        Ok((gx, gai, gb))
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut ParamSink<'a, T>) {
        self.conv_a.params(&format!("{prefix}.conv_a"), out);
        self.conv_b.params(&format!("{prefix}.conv_b"), out);
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamSinkMut<'a, T>) {
        self.conv_a.params_mut(&format!("{prefix}.conv_a"), out);
        self.conv_b.params_mut(&format!("{prefix}.conv_b"), out);
    }

    pub(crate) fn buffers<'a>(&'a self, prefix: &str, out: &mut ParamSink<'a, T>) {
        self.conv_a.buffers(&format!("{prefix}.conv_a"), out);
        self.conv_b.buffers(&format!("{prefix}.conv_b"), out);
    }

    pub(crate) fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamSinkMut<'a, T>) {
        self.conv_a.buffers_mut(&format!("{prefix}.conv_a"), out);
        self.conv_b.buffers_mut(&format!("{prefix}.conv_b"), out);
    }

    /// Zeroes conv weights, biases and norm shifts, making the block an identity map.
    pub fn zero_residual_path(&mut self) {
        for unit in [&mut self.conv_a, &mut self.conv_b] {
            unit.conv.weight.data_mut().iter_mut().for_each(|v| *v = T::zero());
            unit.conv.bias.iter_mut().for_each(|v| *v = T::zero());
            unit.bn.shift.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}
