//! Differentiable primitives. Each forward has a matching explicit backward.

mod batchnorm;
mod conv;
mod elementwise;
pub(crate) mod gemm;
mod pool;
mod resize;

pub use batchnorm::{batch_norm_backward, batch_norm_infer, batch_norm_train, BatchNormCache};
pub use conv::{conv2d, conv2d_backward, transposed_conv2x2, transposed_conv2x2_backward, Padding};
pub use elementwise::{
    add, concat_channels, hadamard, hadamard_backward, relu, sigmoid, sigmoid_scalar, split_channels, tanh,
    Activation,
};
pub use pool::{maxpool2x2, maxpool2x2_backward, ArgmaxCache};
pub use resize::bilinear_resize;
