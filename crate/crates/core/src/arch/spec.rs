//! Declarative network descriptions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::Padding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Resnet50,
    Alexnet,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Resnet50 => "resnet50",
            Architecture::Alexnet => "alexnet",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resnet50" | "resnet-50" => Ok(Architecture::Resnet50),
            "alexnet" => Ok(Architecture::Alexnet),
            other => Err(Error::Config(format!("unknown architecture {other:?} (expected resnet50 or alexnet)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Identity,
    Convolutional,
}

/// A bottleneck residual block: 1x1 -> k x k -> 1x1 convolutions with a shortcut.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub filters: (usize, usize, usize),
    pub mid_kernel: usize,
    /// Only meaningful for convolutional blocks; identity blocks always use 1.
    pub stride: usize,
}

impl BlockSpec {
    pub fn identity(filters: (usize, usize, usize), mid_kernel: usize) -> Self {
        Self {
            kind: BlockKind::Identity,
            filters,
            mid_kernel,
            stride: 1,
        }
    }

    pub fn convolutional(filters: (usize, usize, usize), mid_kernel: usize, stride: usize) -> Self {
        Self {
            kind: BlockKind::Convolutional,
            filters,
            mid_kernel,
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.filters.2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    BatchNorm,
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
        padding: Padding,
    },
    Block(BlockSpec),
    GlobalAvgPool,
    Flatten,
    Dense {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPooling {
    GlobalAverage,
    Flatten,
}

/// Switches that turn the default architectures into variants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkOptions {
    pub batchnorm: bool,
    pub head_pooling: HeadPooling,
    /// Identity blocks in ResNet stages 2..=5.
    pub identity_blocks: [usize; 4],
}

impl Default for NetworkOptions {
    fn default() -> Self {
        Self {
            batchnorm: true,
            head_pooling: HeadPooling::GlobalAverage,
            identity_blocks: RESNET50_IDENTITY_BLOCKS,
        }
    }
}

pub const RESNET50_IDENTITY_BLOCKS: [usize; 4] = [2, 3, 5, 2];
pub const RESNET50_FILTERS: [(usize, usize, usize); 4] = [(64, 64, 256), (128, 128, 512), (256, 256, 1024), (512, 512, 2048)];
pub const RESNET50_STRIDES: [usize; 4] = [1, 2, 2, 2];
pub const RESNET_MIN_INPUT: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: Architecture,
    /// `(channels, height, width)`.
    pub input_shape: (usize, usize, usize),
    pub output_dim: usize,
    pub batchnorm: bool,
    pub stages: Vec<StageSpec>,
    /// Pooling/flatten and dense layers after the last stage. The final dense
    /// layer has no activation.
    pub head: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// ResNet-50: a 7x7 stem with max pooling, then four stages that each open
    /// with one convolutional block followed by identity blocks.
    pub fn resnet50(input_shape: (usize, usize, usize), output_dim: usize, options: NetworkOptions) -> Result<Self> {
        let (_, h, w) = input_shape;
        if h < RESNET_MIN_INPUT || w < RESNET_MIN_INPUT {
            return Err(Error::Spec(format!(
                "stage1: input extent {h}x{w} is below the {RESNET_MIN_INPUT}x{RESNET_MIN_INPUT} minimum of the stride pyramid"
            )));
        }
        if output_dim == 0 {
            return Err(Error::Spec("output_dim must be positive".into()));
        }
        let mut stages = vec![StageSpec {
            name: "stage1".into(),
            layers: vec![
                LayerSpec::Conv {
                    filters: 64,
                    kernel: 7,
                    stride: 2,
                    padding: Padding::Same,
                },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    window: 3,
                    stride: 2,
                    padding: Padding::Same,
                },
            ],
        }];
        for (i, ((&filters, &stride), &identity)) in RESNET50_FILTERS
            .iter()
            .zip(&RESNET50_STRIDES)
            .zip(&options.identity_blocks)
            .enumerate()
        {
            let mut layers = vec![LayerSpec::Block(BlockSpec::convolutional(filters, 3, stride))];
            layers.extend(std::iter::repeat_n(LayerSpec::Block(BlockSpec::identity(filters, 3)), identity));
            stages.push(StageSpec {
                name: format!("stage{}", i + 2),
                layers,
            });
        }
        let pool = match options.head_pooling {
            HeadPooling::GlobalAverage => LayerSpec::GlobalAvgPool,
            HeadPooling::Flatten => LayerSpec::Flatten,
        };
        Ok(Self {
            name: Architecture::Resnet50,
            input_shape,
            output_dim,
            batchnorm: options.batchnorm,
            stages,
            head: vec![pool, LayerSpec::Dense { units: output_dim }],
        })
    }

    /// AlexNet with a single linear output unit: five convolutions (pooling after
    /// the 1st, 2nd and 5th), then three dense layers with dropout after the
    /// first two.
    pub fn alexnet(input_shape: (usize, usize, usize), output_dim: usize) -> Result<Self> {
        if output_dim == 0 {
            return Err(Error::Spec("output_dim must be positive".into()));
        }
        let conv = |filters, kernel, stride| LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding: Padding::Same,
        };
        let pool = LayerSpec::MaxPool {
            window: 3,
            stride: 2,
            padding: Padding::Valid,
        };
        let stage = |i: usize, layers: Vec<LayerSpec>| StageSpec {
            name: format!("stage{i}"),
            layers,
        };
        let spec = Self {
            name: Architecture::Alexnet,
            input_shape,
            output_dim,
            batchnorm: false,
            stages: vec![
                stage(1, vec![conv(96, 11, 4), LayerSpec::Relu, pool]),
                stage(2, vec![conv(256, 5, 1), LayerSpec::Relu, pool]),
                stage(3, vec![conv(384, 3, 1), LayerSpec::Relu]),
                stage(4, vec![conv(384, 3, 1), LayerSpec::Relu]),
                stage(5, vec![conv(256, 3, 1), LayerSpec::Relu, pool]),
            ],
            head: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 4096 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Dense { units: 4096 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Dense { units: output_dim },
            ],
        };
        // surface pyramid failures at construction time
        crate::arch::network::Network::new(spec.clone())?;
        Ok(spec)
    }

    pub fn build(name: Architecture, input_shape: (usize, usize, usize), output_dim: usize, options: NetworkOptions) -> Result<Self> {
        match name {
            Architecture::Resnet50 => Self::resnet50(input_shape, output_dim, options),
            Architecture::Alexnet => Self::alexnet(input_shape, output_dim),
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BlockSpec> {
        self.stages.iter().flat_map(|s| s.layers.iter()).filter_map(|l| match l {
            LayerSpec::Block(b) => Some(b),
            _ => None,
        })
    }

    pub fn count_blocks(&self, kind: BlockKind) -> usize {
        self.blocks().filter(|b| b.kind == kind).count()
    }

    /// Weighted convolution layers, counting the three inside each block and
    /// the projection in each convolutional block's shortcut.
    pub fn conv_layer_count(&self) -> usize {
        self.stages
            .iter()
            .flat_map(|s| s.layers.iter())
            .map(|l| match l {
                LayerSpec::Conv { .. } => 1,
                LayerSpec::Block(b) => match b.kind {
                    BlockKind::Identity => 3,
                    BlockKind::Convolutional => 4,
                },
                _ => 0,
            })
            .sum()
    }

    pub fn dense_layer_count(&self) -> usize {
        self.head.iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count()
    }

    /// Names of the stages containing a max-pool layer.
    pub fn stages_with_maxpool(&self) -> Vec<&str> {
        self.stages
            .iter()
            .filter(|s| s.layers.iter().any(|l| matches!(l, LayerSpec::MaxPool { .. })))
            .map(|s| s.name.as_str())
            .collect()
    }

    /// Checks the structural rules of the declared architecture.
    pub fn validate(&self) -> Result<()> {
        match self.head.last() {
            Some(LayerSpec::Dense { units }) if *units == self.output_dim => {}
            _ => return Err(Error::Spec("the head must end in a dense layer with output_dim units".into())),
        }
        if self.name == Architecture::Resnet50 {
            if self.stages.len() != 5 {
                return Err(Error::Spec(format!("resnet50 needs 5 stages, found {}", self.stages.len())));
            }
            for stage in &self.stages[1..] {
                let kinds: Vec<_> = stage
                    .layers
                    .iter()
                    .map(|l| match l {
                        LayerSpec::Block(b) => Ok(b.kind),
                        _ => Err(Error::Spec(format!("{}: only residual blocks are allowed", stage.name))),
                    })
                    .collect::<Result<_>>()?;
                if kinds.first() != Some(&BlockKind::Convolutional)
                    || kinds[1..].iter().any(|k| *k != BlockKind::Identity)
                {
                    return Err(Error::Spec(format!(
                        "{}: must open with one convolutional block followed only by identity blocks",
                        stage.name
                    )));
                }
            }
        }
        Ok(())
    }
}
