//! The full encoder-decoder network.

use rand::Rng;

use crate::arch::config::{DownsampleVariant, ModelConfig, SkipTap};
use crate::arch::layers::{
    Conv2d, ConvUnit, ConvUnitCache, ParamSink, ParamSinkMut, ParamView, PatchBlock, PatchBlockCache,
};
use crate::error::{Error, Result, TensorError};
use crate::ops::elementwise::add_assign;
use crate::ops::{
    bilinear_upsample, bilinear_upsample_backward, concat_channels, conv2d_backward, dropout, dropout_backward,
    softmax_cross_entropy, split_channels, ConvSpec, DropoutMask, Mode,
};
use crate::optim::{adam_step, AdamState};
use crate::scalar::Scalar;
use crate::tensor::{LabelMap, Shape4, Tensor4};

/// Factor between the deepest encoder stage and the skip resolution.
const DEEP_UPSAMPLE: usize = 8;
/// Factor between the skip resolution and the input.
const FINAL_UPSAMPLE: usize = 2;
/// Multiplier on the fan-in init of the final 1x1 classifier.
const CLASSIFIER_INIT_GAIN: f64 = 0.1;

fn downsample_unit<T: Scalar, R: Rng + ?Sized>(
    variant: DownsampleVariant,
    in_c: usize,
    out_c: usize,
    rng: &mut R,
) -> ConvUnit<T> {
    match variant {
        DownsampleVariant::Conv5x5 => ConvUnit::new(in_c, out_c, ConvSpec::new(5, 2, 2, 1), false, rng),
        DownsampleVariant::Conv3x3 => ConvUnit::new(in_c, out_c, ConvSpec::new(3, 2, 1, 1), false, rng),
        DownsampleVariant::Conv3x3MaxPool => ConvUnit::new(in_c, out_c, ConvSpec::new(3, 1, 1, 1), true, rng),
    }
}

/// One encoder stage: downsample unit then Patch block.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage<T> {
    pub down: ConvUnit<T>,
    pub patch: PatchBlock<T>,
}

/// PNet: four (downsample, Patch block) stages and a single-skip decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PNet<T> {
    config: ModelConfig,
    pub stages: Vec<Stage<T>>,
    pub fuse: ConvUnit<T>,
    pub mix: ConvUnit<T>,
    pub classify: Conv2d<T>,
}

/// Activations retained by a train-mode forward pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    input: Shape4,
    stages: Vec<(ConvUnitCache<T>, PatchBlockCache<T>)>,
    deep: Shape4,
    fuse: ConvUnitCache<T>,
    drop: Option<DropoutMask<T>>,
    mix: ConvUnitCache<T>,
    low_res_logits: Shape4,
}

/// Parameter gradients aligned with [`PNet::named_params`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub groups: Vec<Vec<T>>,
}

impl<T: Scalar> PNet<T> {
    /// Fresh network with seeded fan-in initialization.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(4);
        let mut in_c = config.input_channels;
        for &width in &config.stage_widths {
            stages.push(Stage {
                down: downsample_unit(config.downsample, in_c, width, rng),
                patch: PatchBlock::new(width, config.dilation_pair, rng),
            });
            in_c = width;
        }
        let d = config.decoder_width;
        let fuse = ConvUnit::new(config.fuse_in_channels(), d, ConvSpec::new(3, 1, 1, 1), false, rng);
        let mix = ConvUnit::new(d, d, ConvSpec::pointwise(), false, rng);
        let mut classify = Conv2d::kaiming(d, config.num_classes, ConvSpec::pointwise(), rng);
        // near-uniform initial class scores
        classify
            .weight
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= T::from_acc(CLASSIFIER_INIT_GAIN));
        Ok(Self {
            config,
            stages,
            fuse,
            mix,
            classify,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        if s.c != self.config.input_channels {
            return Err(TensorError::DimMismatch {
                op: "pnet_forward",
                dim: "input channels",
                expected: self.config.input_channels,
                got: s.c,
            }
            .into());
        }
        ModelConfig::check_resolution(s.h, s.w)
    }

    /// Eval-mode forward: running statistics, no dropout. Returns `n x K x H x W` logits.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut skip = None;
        for (i, stage) in self.stages.iter().enumerate() {
            let d = stage.down.forward_eval(&h)?;
            if i == 0 && self.config.skip_tap == SkipTap::BeforePatch {
                skip = Some(d.clone());
            }
            h = stage.patch.forward_eval(&d)?;
            if i == 0 && self.config.skip_tap == SkipTap::AfterPatch {
                skip = Some(h.clone());
            }
        }
        let up = bilinear_upsample(&h, DEEP_UPSAMPLE)?;
        let cat = concat_channels(&up, &skip.expect("stage 1 always runs"))?;
        let f = self.fuse.forward_eval(&cat)?;
        let m = self.mix.forward_eval(&f)?;
        let logits = self.classify.forward(&m)?;
        Ok(bilinear_upsample(&logits, FINAL_UPSAMPLE)?)
    }

    /// Forward in either mode. Train mode updates batch-norm running statistics,
    /// draws dropout masks from `rng`, and returns the cache needed by [`PNet::backward`].
    pub fn forward_mode<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor4<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor4<T>, Option<ForwardCache<T>>)> {
        match mode {
            Mode::Eval => Ok((self.forward(x)?, None)),
            Mode::Train => {
                let (y, c) = self.forward_train(x, rng)?;
                Ok((y, Some(c)))
            }
        }
    }

    pub fn forward_train<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor4<T>,
        rng: &mut R,
    ) -> Result<(Tensor4<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let tap = self.config.skip_tap;
        let mut h = x.clone();
        let mut skip = None;
        let mut caches = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            let (d, dc) = stage.down.forward_train(&h)?;
            if i == 0 && tap == SkipTap::BeforePatch {
                skip = Some(d.clone());
            }
            let (p, pc) = stage.patch.forward_train(&d)?;
            if i == 0 && tap == SkipTap::AfterPatch {
                skip = Some(p.clone());
            }
            caches.push((dc, pc));
            h = p;
        }
        let deep = h.shape();
        let up = bilinear_upsample(&h, DEEP_UPSAMPLE)?;
        let cat = concat_channels(&up, &skip.expect("stage 1 always runs"))?;
        let (f, fuse) = self.fuse.forward_train(&cat)?;
        let (fd, drop) = dropout(&f, self.config.dropout_rate, Mode::Train, rng)?;
        let (m, mix) = self.mix.forward_train(&fd)?;
        let logits = self.classify.forward(&m)?;
        let low_res_logits = logits.shape();
        let out = bilinear_upsample(&logits, FINAL_UPSAMPLE)?;
        Ok((
            out,
            ForwardCache {
                input: x.shape(),
                stages: caches,
                deep,
                fuse,
                drop,
                mix,
                low_res_logits,
            },
        ))
    }

    /// Reverse pass through every layer. Gradients follow [`PNet::named_params`] order.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor4<T>) -> Result<Gradients<T>> {
        let expected = Shape4::new(cache.input.n, self.config.num_classes, cache.input.h, cache.input.w);
        if grad_logits.shape() != expected {
            return Err(TensorError::invalid(
                "pnet_backward",
                format!("gradient shape {} does not match logits {}", grad_logits.shape(), expected),
            )
            .into());
        }
        let g = bilinear_upsample_backward(grad_logits, cache.low_res_logits, FINAL_UPSAMPLE)?;
        let cls = conv2d_backward(cache.mix.output(), &self.classify.weight, &self.classify.spec, &g)?;
        let (g, mix_g) = self.mix.backward(&cache.mix, &cls.x)?;
        let g = dropout_backward(cache.drop.as_ref(), &g)?;
        let (g, fuse_g) = self.fuse.backward(&cache.fuse, &g)?;
        let (g_up, g_skip) = split_channels(&g, self.config.stage_widths[3])?;
        let mut g = bilinear_upsample_backward(&g_up, cache.deep, DEEP_UPSAMPLE)?;

        let mut stage_grads = Vec::with_capacity(4);
        for (i, (stage, (dc, pc))) in self.stages.iter().zip(&cache.stages).enumerate().rev() {
            if i == 0 && self.config.skip_tap == SkipTap::AfterPatch {
                add_assign(&mut g, &g_skip)?;
            }
            let (mut gd, ga, gb) = stage.patch.backward(pc, &g)?;
            if i == 0 && self.config.skip_tap == SkipTap::BeforePatch {
                add_assign(&mut gd, &g_skip)?;
            }
            let (gx, gdown) = stage.down.backward(dc, &gd)?;
            stage_grads.push((gdown, ga, gb));
            g = gx;
        }
        stage_grads.reverse();

        let mut groups = Vec::new();
        for (gdown, ga, gb) in stage_grads {
            gdown.append_to(&mut groups);
            ga.append_to(&mut groups);
            gb.append_to(&mut groups);
        }
        fuse_g.append_to(&mut groups);
        mix_g.append_to(&mut groups);
        groups.push(cls.w.into_data());
        groups.push(cls.b);
        Ok(Gradients { groups })
    }

    /// Learned parameters in canonical order (serialization and optimizer order).
    pub fn named_params(&self) -> Vec<(String, ParamView<'_, T>)> {
        let mut out: ParamSink<'_, T> = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            s.down.params(&format!("enc{}.down", i + 1), &mut out);
            s.patch.params(&format!("enc{}.patch", i + 1), &mut out);
        }
        self.fuse.params("dec.fuse", &mut out);
        self.mix.params("dec.mix", &mut out);
        self.classify.params("dec.classify", &mut out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out: ParamSinkMut<'_, T> = Vec::new();
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.down.params_mut(&format!("enc{}.down", i + 1), &mut out);
            s.patch.params_mut(&format!("enc{}.patch", i + 1), &mut out);
        }
        self.fuse.params_mut("dec.fuse", &mut out);
        self.mix.params_mut("dec.mix", &mut out);
        self.classify.params_mut("dec.classify", &mut out);
        out
    }

    /// Batch-norm running statistics in canonical order.
    pub fn named_buffers(&self) -> Vec<(String, ParamView<'_, T>)> {
        let mut out: ParamSink<'_, T> = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            s.down.buffers(&format!("enc{}.down", i + 1), &mut out);
            s.patch.buffers(&format!("enc{}.patch", i + 1), &mut out);
        }
        self.fuse.buffers("dec.fuse", &mut out);
        self.mix.buffers("dec.mix", &mut out);
        out
    }

    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out: ParamSinkMut<'_, T> = Vec::new();
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.down.buffers_mut(&format!("enc{}.down", i + 1), &mut out);
            s.patch.buffers_mut(&format!("enc{}.patch", i + 1), &mut out);
        }
        self.fuse.buffers_mut("dec.fuse", &mut out);
        self.mix.buffers_mut("dec.mix", &mut out);
        out
    }

    /// Number of learned scalars.
    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.data.len()).sum()
    }

    /// Fresh optimizer state shaped like the parameters.
    pub fn adam_state(&self) -> AdamState<T> {
        AdamState::new(self.named_params().iter().map(|(_, p)| p.data.len()))
    }

    /// Train-mode forward, cross-entropy loss, full backward, one Adam update.
    /// Returns the pre-update loss.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        images: &Tensor4<T>,
        labels: &LabelMap,
        adam: &mut AdamState<T>,
        lr: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(images, labels, rng)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        let mut params: Vec<&mut [T]> = self.named_params_mut().into_iter().map(|(_, p)| p).collect();
        adam_step(&mut params, &grads.groups, adam, lr)?;
        Ok(loss)
    }

    /// Train-mode loss and parameter gradients without updating parameters.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &mut self,
        images: &Tensor4<T>,
        labels: &LabelMap,
        rng: &mut R,
    ) -> Result<(f64, Gradients<T>)> {
        let (logits, cache) = self.forward_train(images, rng)?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
        let grads = self.backward(&cache, &grad)?;
        Ok((loss, grads))
    }

    /// Copies parameters and buffers from `other`, which must share this configuration.
    pub fn load_from(&mut self, other: &PNet<T>) -> Result<()> {
        if other.config != self.config {
            return Err(Error::config("cannot copy weights between different configurations"));
        }
        *self = other.clone();
        Ok(())
    }

    /// Converts every parameter and buffer to another scalar type.
    pub fn cast<U: Scalar>(&self) -> PNet<U> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut out = PNet::<U>::new(self.config.clone(), &mut rng).expect("config already validated");
        for ((_, dst), (_, src)) in out.named_params_mut().into_iter().zip(self.named_params()) {
            dst.iter_mut().zip(src.data).for_each(|(d, &s)| *d = U::from_acc(s.acc()));
        }
        for ((_, dst), (_, src)) in out.named_buffers_mut().into_iter().zip(self.named_buffers()) {
            dst.iter_mut().zip(src.data).for_each(|(d, &s)| *d = U::from_acc(s.acc()));
        }
        out
    }
}
