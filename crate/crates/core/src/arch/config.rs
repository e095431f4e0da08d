use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How each encoder stage halves resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DownsampleVariant {
    /// 5x5 kernel, stride 2, padding 2.
    #[default]
    Conv5x5,
    /// 3x3 kernel, stride 2, padding 1.
    Conv3x3,
    /// 3x3 kernel, stride 1, padding 1, then 2x2 max pooling.
    Conv3x3MaxPool,
}

impl DownsampleVariant {
    pub const ALL: [DownsampleVariant; 3] = [Self::Conv3x3, Self::Conv3x3MaxPool, Self::Conv5x5];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Conv5x5 => "conv5x5",
            Self::Conv3x3 => "conv3x3",
            Self::Conv3x3MaxPool => "conv3x3_maxpool",
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            Self::Conv5x5 => 0,
            Self::Conv3x3 => 1,
            Self::Conv3x3MaxPool => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Conv5x5),
            1 => Some(Self::Conv3x3),
            2 => Some(Self::Conv3x3MaxPool),
            _ => None,
        }
    }
}

impl fmt::Display for DownsampleVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DownsampleVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conv5x5" | "5x5" => Ok(Self::Conv5x5),
            "conv3x3" | "3x3" => Ok(Self::Conv3x3),
            "conv3x3_maxpool" | "pool" | "maxpool" => Ok(Self::Conv3x3MaxPool),
            other => Err(Error::config(format!(
                "unknown downsample variant '{other}' (expected conv5x5, conv3x3 or conv3x3_maxpool)"
            ))),
        }
    }
}

/// Which stage-1 activation feeds the decoder skip connection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SkipTap {
    /// Output of the first Patch block.
    #[default]
    AfterPatch,
    /// Output of the first downsample, before its Patch block.
    BeforePatch,
}

impl SkipTap {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::AfterPatch => "after_patch",
            Self::BeforePatch => "before_patch",
        }
    }
}

impl FromStr for SkipTap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "after_patch" => Ok(Self::AfterPatch),
            "before_patch" => Ok(Self::BeforePatch),
            other => Err(Error::config(format!(
                "unknown skip tap '{other}' (expected after_patch or before_patch)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub stage_widths: [usize; 4],
    pub decoder_width: usize,
    pub num_classes: usize,
    pub dilation_pair: (usize, usize),
    pub downsample: DownsampleVariant,
    pub dropout_rate: f64,
    pub skip_tap: SkipTap,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            stage_widths: [32, 64, 128, 256],
            decoder_width: 64,
            num_classes: 2,
            dilation_pair: (2, 6),
            downsample: DownsampleVariant::Conv5x5,
            dropout_rate: 0.3,
            skip_tap: SkipTap::AfterPatch,
        }
    }
}

/// Total downsampling factor of the encoder.
pub const RESOLUTION_DIVISOR: usize = 16;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::config("input_channels must be at least 1"));
        }
        if self.stage_widths.contains(&0) || self.decoder_width == 0 {
            return Err(Error::config("channel widths must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        if self.num_classes > u8::MAX as usize + 1 {
            return Err(Error::config("num_classes must fit in an 8-bit label"));
        }
        let (r1, r2) = self.dilation_pair;
        if r1 == 0 || r2 == 0 {
            return Err(Error::config("dilation rates must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Channels entering the decoder fusion conv: upsampled deep features then the skip.
    pub fn fuse_in_channels(&self) -> usize {
        self.stage_widths[3] + self.stage_widths[0]
    }

    /// Checks that an `h x w` input is usable by the network.
    pub fn check_resolution(h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || !h.is_multiple_of(RESOLUTION_DIVISOR) || !w.is_multiple_of(RESOLUTION_DIVISOR) {
            return Err(Error::config(format!(
                "input {w}x{h} (WxH) is not divisible by {RESOLUTION_DIVISOR}; resize to a multiple of {RESOLUTION_DIVISOR}"
            )));
        }
        Ok(())
    }
}
