//! Parameter, FLOP, shape and dilation-geometry analyzers.
//!
//! FLOP accounting per layer, all at the layer's output resolution `h' x w'`:
//!
//! | layer              | cost                                    |
//! |--------------------|-----------------------------------------|
//! | conv               | `2*kh*kw*in*out*h'*w'` + `out*h'*w'` (bias) |
//! | max pool 2x2       | 3 comparisons per output                |
//! | batch norm (eval)  | 2 per element (scale, shift)            |
//! | relu               | 1 per element                           |
//! | residual add       | 1 per element                           |
//! | bilinear upsample  | 7 per output (4 multiplies, 3 adds)     |
//! | concat, dropout    | 0                                       |

use std::fmt;

use crate::arch::config::{DownsampleVariant, ModelConfig};
use crate::error::Result;

/// Pixel span of a `k`-tap kernel at the given dilation rate: `k + (k-1)(rate-1)`.
pub const fn effective_kernel(k: usize, rate: usize) -> usize {
    k + (k - 1) * (rate - 1)
}

/// How strictly the second dilation rate must span the first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CoverageRule {
    /// The gap between second-conv taps is exactly one first-conv window.
    #[default]
    Exact,
    /// The gap is at least one first-conv window.
    AtLeast,
}

/// Whether a 3x3 conv at rate `r2` covers the range of a 3x3 conv at rate `r1` (exact rule).
pub fn dilation_pair_covers(r1: usize, r2: usize) -> bool {
    dilation_pair_covers_with(r1, r2, CoverageRule::Exact)
}

pub fn dilation_pair_covers_with(r1: usize, r2: usize, rule: CoverageRule) -> bool {
    let need = effective_kernel(3, r1) + 1;
    match rule {
        CoverageRule::Exact => r2 == need,
        CoverageRule::AtLeast => r2 >= need,
    }
}

/// Kind of layer in a [`StageTrace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        kernel: usize,
        stride: usize,
        dilation: usize,
    },
    MaxPool,
    BatchNorm,
    Relu,
    Add,
    Upsample {
        factor: usize,
    },
    Concat,
    Dropout,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Conv { kernel, stride, dilation } => {
                write!(f, "conv{kernel}x{kernel}/s{stride}/d{dilation}")
            }
            LayerKind::MaxPool => f.write_str("maxpool2x2"),
            LayerKind::BatchNorm => f.write_str("batchnorm"),
            LayerKind::Relu => f.write_str("relu"),
            LayerKind::Add => f.write_str("add"),
            LayerKind::Upsample { factor } => write!(f, "upsample x{factor}"),
            LayerKind::Concat => f.write_str("concat"),
            LayerKind::Dropout => f.write_str("dropout"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub name: String,
    pub kind: LayerKind,
    /// Output `(channels, height, width)`.
    pub output: (usize, usize, usize),
    pub params: u64,
    pub flops: u64,
    /// Receptive field in input pixels along the main path, when defined.
    pub receptive_field: Option<usize>,
}

/// Layer-by-layer record of one forward pass at a given resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTrace {
    pub input: (usize, usize),
    pub layers: Vec<LayerTrace>,
}

impl StageTrace {
    pub fn total_params(&self) -> u64 {
        self.layers.iter().map(|l| l.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    /// `(h, w)` after each encoder stage.
    pub fn encoder_resolutions(&self) -> Vec<(usize, usize)> {
        (1..=4)
            .filter_map(|i| {
                self.layers
                    .iter()
                    .find(|l| l.name == format!("enc{i}.patch.add"))
                    .map(|l| (l.output.1, l.output.2))
            })
            .collect()
    }
}

struct Walker {
    layers: Vec<LayerTrace>,
    c: usize,
    h: usize,
    w: usize,
    rf: usize,
    jump: usize,
}

impl Walker {
    fn push(&mut self, name: String, kind: LayerKind, params: u64, flops: u64, rf: Option<usize>) {
        self.layers.push(LayerTrace {
            name,
            kind,
            output: (self.c, self.h, self.w),
            params,
            flops,
            receptive_field: rf,
        });
    }

    fn elems(&self) -> u64 {
        (self.c * self.h * self.w) as u64
    }

    fn conv(&mut self, name: &str, out_c: usize, k: usize, stride: usize, pad: usize, dil: usize, track_rf: bool) {
        let span = effective_kernel(k, dil);
        self.h = (self.h + 2 * pad - span) / stride + 1;
        self.w = (self.w + 2 * pad - span) / stride + 1;
        let in_c = self.c;
        self.c = out_c;
        let params = (out_c * in_c * k * k + out_c) as u64;
        let flops = 2 * (k * k * in_c * out_c) as u64 * (self.h * self.w) as u64 + self.elems();
        let rf = if track_rf {
            self.rf += (span - 1) * self.jump;
            self.jump *= stride;
            Some(self.rf)
        } else {
            None
        };
        self.push(format!("{name}.conv"), LayerKind::Conv { kernel: k, stride, dilation: dil }, params, flops, rf);
    }

    fn pool(&mut self, name: &str, track_rf: bool) {
        self.h = self.h.div_ceil(2);
        self.w = self.w.div_ceil(2);
        let rf = if track_rf {
            self.rf += self.jump;
            self.jump *= 2;
            Some(self.rf)
        } else {
            None
        };
        let flops = 3 * self.elems();
        self.push(format!("{name}.pool"), LayerKind::MaxPool, 0, flops, rf);
    }

    fn bn_relu(&mut self, name: &str) {
        let e = self.elems();
        self.push(format!("{name}.bn"), LayerKind::BatchNorm, 2 * self.c as u64, 2 * e, None);
        self.push(format!("{name}.relu"), LayerKind::Relu, 0, e, None);
    }
}

/// Every layer of the network at input `h x w`, with output shapes, parameters and FLOPs.
pub fn stage_shapes(config: &ModelConfig, h: usize, w: usize) -> Result<StageTrace> {
    config.validate()?;
    ModelConfig::check_resolution(h, w)?;
    let (r1, r2) = config.dilation_pair;
    let mut wk = Walker {
        layers: Vec::new(),
        c: config.input_channels,
        h,
        w,
        rf: 1,
        jump: 1,
    };
    let mut skip = (0, 0, 0);
    for (i, &width) in config.stage_widths.iter().enumerate() {
        let down = format!("enc{}.down", i + 1);
        match config.downsample {
            DownsampleVariant::Conv5x5 => wk.conv(&down, width, 5, 2, 2, 1, true),
            DownsampleVariant::Conv3x3 => wk.conv(&down, width, 3, 2, 1, 1, true),
            DownsampleVariant::Conv3x3MaxPool => {
                wk.conv(&down, width, 3, 1, 1, 1, true);
                wk.pool(&down, true);
            }
        }
        wk.bn_relu(&down);
        if i == 0 && config.skip_tap == crate::arch::SkipTap::BeforePatch {
            skip = (wk.c, wk.h, wk.w);
        }
        let patch = format!("enc{}.patch", i + 1);
        wk.conv(&format!("{patch}.conv_a"), width, 3, 1, r1, r1, true);
        wk.bn_relu(&format!("{patch}.conv_a"));
        wk.conv(&format!("{patch}.conv_b"), width, 3, 1, r2, r2, true);
        wk.bn_relu(&format!("{patch}.conv_b"));
        let (e, rf) = (wk.elems(), wk.rf);
        wk.push(format!("{patch}.add"), LayerKind::Add, 0, e, Some(rf));
        if i == 0 && config.skip_tap == crate::arch::SkipTap::AfterPatch {
            skip = (wk.c, wk.h, wk.w);
        }
    }

    wk.h *= 8;
    wk.w *= 8;
    let e = wk.elems();
    wk.push("dec.up8".into(), LayerKind::Upsample { factor: 8 }, 0, 7 * e, None);
    assert_eq!((wk.h, wk.w), (skip.1, skip.2));
    wk.c += skip.0;
    wk.push("dec.concat".into(), LayerKind::Concat, 0, 0, None);
    wk.conv("dec.fuse", config.decoder_width, 3, 1, 1, 1, false);
    wk.bn_relu("dec.fuse");
    wk.push("dec.dropout".into(), LayerKind::Dropout, 0, 0, None);
    wk.conv("dec.mix", config.decoder_width, 1, 1, 0, 1, false);
    wk.bn_relu("dec.mix");
    wk.conv("dec.classify", config.num_classes, 1, 1, 0, 1, false);
    wk.h *= 2;
    wk.w *= 2;
    let e = wk.elems();
    wk.push("dec.up2".into(), LayerKind::Upsample { factor: 2 }, 0, 7 * e, None);
    Ok(StageTrace {
        input: (h, w),
        layers: wk.layers,
    })
}

fn conv_params(in_c: usize, out_c: usize, k: usize) -> u64 {
    (out_c * in_c * k * k + out_c) as u64
}

/// Learned scalars: conv weights and biases plus batch-norm scale and shift.
pub fn param_count(config: &ModelConfig) -> u64 {
    let down_k = match config.downsample {
        DownsampleVariant::Conv5x5 => 5,
        _ => 3,
    };
    let mut total = 0;
    let mut in_c = config.input_channels;
    for &c in &config.stage_widths {
        total += conv_params(in_c, c, down_k) + 2 * c as u64;
        total += 2 * (conv_params(c, c, 3) + 2 * c as u64);
        in_c = c;
    }
    let d = config.decoder_width;
    total += conv_params(config.fuse_in_channels(), d, 3) + 2 * d as u64;
    total += conv_params(d, d, 1) + 2 * d as u64;
    total += conv_params(d, config.num_classes, 1);
    total
}

/// Forward-pass FLOPs at input `h x w` (see the module table for the per-layer rule).
pub fn flop_count(config: &ModelConfig, h: usize, w: usize) -> Result<u64> {
    config.validate()?;
    ModelConfig::check_resolution(h, w)?;
    let conv = |k: usize, i: usize, o: usize, px: u64| 2 * (k * k * i * o) as u64 * px + o as u64 * px;
    let bn_relu = |c: usize, px: u64| 3 * c as u64 * px;
    let mut total = 0;
    let mut in_c = config.input_channels;
    let mut px = (h * w) as u64;
    for &c in &config.stage_widths {
        match config.downsample {
            DownsampleVariant::Conv5x5 => {
                px /= 4;
                total += conv(5, in_c, c, px);
            }
            DownsampleVariant::Conv3x3 => {
                px /= 4;
                total += conv(3, in_c, c, px);
            }
            DownsampleVariant::Conv3x3MaxPool => {
                total += conv(3, in_c, c, px);
                px /= 4;
                total += 3 * c as u64 * px;
            }
        }
        total += bn_relu(c, px);
        total += 2 * (conv(3, c, c, px) + bn_relu(c, px));
        total += c as u64 * px;
        in_c = c;
    }
    let skip_px = px * 64;
    total += 7 * config.stage_widths[3] as u64 * skip_px;
    let d = config.decoder_width;
    total += conv(3, config.fuse_in_channels(), d, skip_px) + bn_relu(d, skip_px);
    total += conv(1, d, d, skip_px) + bn_relu(d, skip_px);
    total += conv(1, d, config.num_classes, skip_px);
    total += 7 * config.num_classes as u64 * skip_px * 4;
    Ok(total)
}
