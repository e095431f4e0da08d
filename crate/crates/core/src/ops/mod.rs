//! Forward and backward kernels used by the network.

pub mod conv;
pub mod elementwise;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod upsample;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvSpec};
pub use elementwise::{
    add, concat_channels, dropout, dropout_backward, relu, relu_backward, split_channels, DropoutMask,
};
pub use loss::softmax_cross_entropy;
pub use norm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormGrads, BatchNormState};
pub use pool::{maxpool2d_backward, maxpool2d_forward, MaxPoolIndices};
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};

/// Whether a layer runs with batch statistics and stochastic masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}
