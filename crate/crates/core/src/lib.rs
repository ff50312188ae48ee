//! Age-regression engine: tensors, reverse-mode autodiff, ResNet-50 and
//! AlexNet builders, Adam training on UTKFace-format data, and an additive
//! white Gaussian noise sweep for measuring inference-time degradation.

pub mod arch;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod noise;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
