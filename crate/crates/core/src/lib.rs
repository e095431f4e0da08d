//! Patch-block encoder-decoder segmentation network (PNet) on a small
//! differentiable tensor core, with its data pipeline, metrics and trainer.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the single-precision types used for training and inference.

pub mod arch;
pub mod data;
pub mod error;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use arch::{ModelConfig, PNet};
pub use error::{Error, Result, TensorError};
pub use ops::{ConvSpec, Mode};
pub use optim::{adam_step, AdamState};
pub use scalar::Scalar;
pub use tensor::{LabelMap, Shape4, Tensor4};
pub use train::{Checkpoint, TrainConfig, TrainLog};

/// Single-precision tensor, the storage type for training and inference.
pub type Tensor = Tensor4<f32>;
/// Double-precision tensor, used for gradient checking.
pub type Tensor64 = Tensor4<f64>;
/// Single-precision network.
pub type PNet32 = PNet<f32>;
/// Double-precision network.
pub type PNet64 = PNet<f64>;
