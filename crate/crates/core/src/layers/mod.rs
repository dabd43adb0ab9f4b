//! Forward and backward passes of every layer the architectures use.

mod activation;
mod clc;
mod dropout;
mod loss;
mod norm;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub use clc::{clc_backward, clc_forward, ClcSpec, ClcWeights};
pub use dropout::{dropout_backward, dropout_forward, DropoutMask};
pub use loss::{argmax_classes, softmax_xent};
pub use norm::{bn_backward, bn_backward_inference, bn_forward, bn_forward_frozen, BnState};
pub use pool::{maxpool_backward, maxpool_forward, pool_margin, PoolRecord, PoolSpec};

pub(crate) use norm::{batch_stats, normalize};
