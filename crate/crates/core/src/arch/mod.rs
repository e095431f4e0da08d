//! Network architecture and its static analyzers.

pub mod analysis;
pub mod config;
pub mod layers;
pub mod model;

pub use analysis::{
    dilation_pair_covers, dilation_pair_covers_with, effective_kernel, flop_count, param_count, stage_shapes,
    CoverageRule, LayerKind, LayerTrace, StageTrace,
};
pub use config::{DownsampleVariant, ModelConfig, SkipTap, RESOLUTION_DIVISOR};
pub use layers::{Conv2d, ConvUnit, ConvUnitGrads, ParamView, PatchBlock, PatchBlockCache};
pub use model::{ForwardCache, Gradients, PNet, Stage};
