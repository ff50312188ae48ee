//! ResNet-50 and AlexNet assembled from declarative specs.

pub mod network;
pub mod spec;

pub use network::{build_block, build_conv_block, build_identity_block, block_param_shapes, init_block, ActShape, Network};
pub use spec::{Architecture, BlockKind, BlockSpec, HeadPooling, LayerSpec, NetworkOptions, NetworkSpec, StageSpec};
pub use spec::{RESNET50_FILTERS, RESNET50_IDENTITY_BLOCKS, RESNET50_STRIDES, RESNET_MIN_INPUT};
