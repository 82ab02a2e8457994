pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod recurrent;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Kernel4, KernelGrad, KernelRef, KernelShape, Shape4, Tensor4};
