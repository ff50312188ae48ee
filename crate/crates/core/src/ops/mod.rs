//! Forward kernels (and their backward counterparts) for every layer type.

pub mod conv;
pub mod dense;
pub mod dropout;
pub mod elementwise;
pub mod norm;
pub mod pool;

pub use conv::{conv2d, conv2d_backward, conv2d_forward, output_extent, ConvParams, Padding};
pub use dense::{dense, dense_backward};
pub use dropout::dropout;
pub use elementwise::{add, relu, relu_backward};
pub use norm::{batchnorm, batchnorm_backward, BatchNormConfig, Mode, RunningStats};
pub use pool::{global_avg_pool, global_avg_pool_backward, maxpool2d, maxpool2d_backward, Pooled};
