//! Convolution-in-convolution engine.
//!
//! Convolutions whose kernels are shared across spatial positions but only
//! locally connected along the channel axis, the NiN-style block
//! architectures built from them, and everything needed to train and verify
//! those networks on CIFAR-sized images from scratch.

pub mod data;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod netbuilder;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Shape4, Tensor4};
