//! Turns a [`NetworkSpec`] into parameters, shapes and graph forward passes.
//!
//! A single walker visits the spec; what it does at each layer depends on the
//! [`Backend`]: the shape backend registers parameter shapes, the graph
//! backend records real ops.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::spec::{BlockKind, BlockSpec, LayerSpec, NetworkSpec};
use crate::autodiff::{Graph, NodeId, ParamStore, StatsStore};
use crate::error::{Error, Result};
use crate::ops::{output_extent, BatchNormConfig, Padding, RunningStats};
use crate::rng::RngStream;
use crate::tensor::{Element, Tensor};

/// Per-sample activation shape tracked by the walker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ActShape {
    fn channels(self, op: &'static str) -> Result<usize> {
        match self {
            ActShape::Spatial { c, .. } => Ok(c),
            ActShape::Flat(_) => Err(Error::dim(op, "expected a spatial activation, found a flat one")),
        }
    }

    pub fn elements(self) -> usize {
        match self {
            ActShape::Spatial { c, h, w } => c * h * w,
            ActShape::Flat(f) => f,
        }
    }
}

impl std::fmt::Display for ActShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActShape::Spatial { c, h, w } => write!(f, "{c}x{h}x{w}"),
            ActShape::Flat(n) => write!(f, "{n}"),
        }
    }
}

pub(crate) trait Backend {
    type Act: Copy;
    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, name: &str, x: Self::Act, in_c: usize, filters: usize, kernel: usize, stride: usize, padding: Padding) -> Result<Self::Act>;
    fn batchnorm(&mut self, name: &str, x: Self::Act, channels: usize) -> Result<Self::Act>;
    fn relu(&mut self, x: Self::Act) -> Result<Self::Act>;
    fn maxpool(&mut self, x: Self::Act, window: usize, stride: usize, padding: Padding) -> Result<Self::Act>;
    fn add(&mut self, a: Self::Act, b: Self::Act) -> Result<Self::Act>;
    fn global_avg_pool(&mut self, x: Self::Act) -> Result<Self::Act>;
    fn flatten(&mut self, x: Self::Act) -> Result<Self::Act>;
    fn dense(&mut self, name: &str, x: Self::Act, in_f: usize, units: usize) -> Result<Self::Act>;
    fn dropout(&mut self, index: usize, x: Self::Act, rate: f64) -> Result<Self::Act>;
}

/// Collects parameter and running-statistics shapes in registration order.
#[derive(Default)]
pub(crate) struct ShapeBackend {
    pub params: Vec<(String, Vec<usize>)>,
    pub stats: Vec<(String, usize)>,
}

impl Backend for ShapeBackend {
    type Act = ();

    fn conv(&mut self, name: &str, _: (), in_c: usize, filters: usize, kernel: usize, _: usize, _: Padding) -> Result<()> {
        self.params.push((format!("{name}.kernel"), vec![filters, in_c, kernel, kernel]));
        self.params.push((format!("{name}.bias"), vec![filters]));
        Ok(())
    }

    fn batchnorm(&mut self, name: &str, _: (), channels: usize) -> Result<()> {
        self.params.push((format!("{name}.gamma"), vec![channels]));
        self.params.push((format!("{name}.beta"), vec![channels]));
        self.stats.push((name.to_string(), channels));
        Ok(())
    }

    fn relu(&mut self, _: ()) -> Result<()> {
        Ok(())
    }

    fn maxpool(&mut self, _: (), _: usize, _: usize, _: Padding) -> Result<()> {
        Ok(())
    }

    fn add(&mut self, _: (), _: ()) -> Result<()> {
        Ok(())
    }

    fn global_avg_pool(&mut self, _: ()) -> Result<()> {
        Ok(())
    }

    fn flatten(&mut self, _: ()) -> Result<()> {
        Ok(())
    }

    fn dense(&mut self, name: &str, _: (), in_f: usize, units: usize) -> Result<()> {
        self.params.push((format!("{name}.weights"), vec![in_f, units]));
        self.params.push((format!("{name}.bias"), vec![units]));
        Ok(())
    }

    fn dropout(&mut self, _: usize, _: (), _: f64) -> Result<()> {
        Ok(())
    }
}

/// Records real ops into a [`Graph`].
pub(crate) struct GraphBackend<'a, 'p, T: Element> {
    pub graph: &'a mut Graph<'p, T>,
    pub stats: &'a mut StatsStore<T>,
    pub bn: BatchNormConfig,
    pub dropout: RngStream,
}

impl<T: Element> Backend for GraphBackend<'_, '_, T> {
    type Act = NodeId;

    fn conv(&mut self, name: &str, x: NodeId, _: usize, _: usize, _: usize, stride: usize, padding: Padding) -> Result<NodeId> {
        let k = self.graph.param(&format!("{name}.kernel"))?;
        let b = self.graph.param(&format!("{name}.bias"))?;
        self.graph.conv2d(x, k, Some(b), (stride, stride), padding)
    }

    fn batchnorm(&mut self, name: &str, x: NodeId, _: usize) -> Result<NodeId> {
        let gamma = self.graph.param(&format!("{name}.gamma"))?;
        let beta = self.graph.param(&format!("{name}.beta"))?;
        let stats = self.stats.get_mut(name).ok_or_else(|| Error::Graph {
            node: name.to_string(),
            detail: "running statistics are not bound".into(),
        })?;
        self.graph.batchnorm(x, gamma, beta, stats, &self.bn)
    }

    fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.graph.relu(x)
    }

    fn maxpool(&mut self, x: NodeId, window: usize, stride: usize, padding: Padding) -> Result<NodeId> {
        self.graph.maxpool2d(x, (window, window), stride, padding)
    }

    fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.graph.add(a, b)
    }

    fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.graph.global_avg_pool(x)
    }

    fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        self.graph.flatten(x)
    }

    fn dense(&mut self, name: &str, x: NodeId, _: usize, _: usize) -> Result<NodeId> {
        let w = self.graph.param(&format!("{name}.weights"))?;
        let b = self.graph.param(&format!("{name}.bias"))?;
        self.graph.dense(x, w, b)
    }

    fn dropout(&mut self, index: usize, x: NodeId, rate: f64) -> Result<NodeId> {
        self.graph.dropout(x, rate, self.dropout.child(index as u64))
    }
}

fn spatial_after(op: &'static str, shape: ActShape, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    let ActShape::Spatial { h, w, .. } = shape else {
        return Err(Error::dim(op, "expected a spatial activation"));
    };
    let (oh, _) = output_extent(op, h, kernel, stride, padding)?;
    let (ow, _) = output_extent(op, w, kernel, stride, padding)?;
    Ok((oh, ow))
}

fn conv_layer<B: Backend>(
    b: &mut B,
    name: &str,
    x: B::Act,
    shape: ActShape,
    filters: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(B::Act, ActShape)> {
    let in_c = shape.channels("conv2d")?;
    let (h, w) = spatial_after("conv2d", shape, kernel, stride, padding)?;
    let y = b.conv(name, x, in_c, filters, kernel, stride, padding)?;
    Ok((y, ActShape::Spatial { c: filters, h, w }))
}

/// Bottleneck block: conv-BN-ReLU, conv-BN-ReLU, conv-BN, plus the shortcut,
/// then ReLU of the sum.
pub(crate) fn walk_block<B: Backend>(
    b: &mut B,
    prefix: &str,
    x: B::Act,
    shape: ActShape,
    spec: &BlockSpec,
    batchnorm: bool,
) -> Result<(B::Act, ActShape)> {
    let in_c = shape.channels("residual block")?;
    let (f1, f2, f3) = spec.filters;
    let stride = match spec.kind {
        BlockKind::Identity => {
            if in_c != f3 {
                return Err(Error::Spec(format!(
                    "{prefix}: identity block needs input channels ({in_c}) equal to f3 ({f3})"
                )));
            }
            1
        }
        BlockKind::Convolutional => spec.stride,
    };
    let bn = |b: &mut B, name: &str, x: B::Act, c: usize| -> Result<B::Act> {
        if batchnorm {
            b.batchnorm(name, x, c)
        } else {
            Ok(x)
        }
    };
    let (y, s) = conv_layer(b, &format!("{prefix}.conv_a"), x, shape, f1, 1, stride, Padding::Same)?;
    let y = bn(b, &format!("{prefix}.bn_a"), y, f1)?;
    let y = b.relu(y)?;
    let (y, s) = conv_layer(b, &format!("{prefix}.conv_b"), y, s, f2, spec.mid_kernel, 1, Padding::Same)?;
    let y = bn(b, &format!("{prefix}.bn_b"), y, f2)?;
    let y = b.relu(y)?;
    let (y, s) = conv_layer(b, &format!("{prefix}.conv_c"), y, s, f3, 1, 1, Padding::Same)?;
    let y = bn(b, &format!("{prefix}.bn_c"), y, f3)?;
    let shortcut = match spec.kind {
        BlockKind::Identity => x,
        BlockKind::Convolutional => {
            let (sc, _) = conv_layer(b, &format!("{prefix}.shortcut_conv"), x, shape, f3, 1, stride, Padding::Same)?;
            bn(b, &format!("{prefix}.shortcut_bn"), sc, f3)?
        }
    };
    let sum = b.add(y, shortcut)?;
    Ok((b.relu(sum)?, s))
}

pub(crate) struct Walk<A> {
    pub output: A,
    pub shape: ActShape,
    pub stage_shapes: Vec<(String, ActShape)>,
}

fn walk_layers<B: Backend>(
    b: &mut B,
    scope: &str,
    layers: &[LayerSpec],
    batchnorm: bool,
    mut x: B::Act,
    mut shape: ActShape,
    dropout_index: &mut usize,
) -> Result<(B::Act, ActShape)> {
    let mut conv_i = 0;
    let mut bn_i = 0;
    let mut dense_i = 0;
    let mut block_i = 0;
    for layer in layers {
        (x, shape) = match *layer {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                conv_i += 1;
                conv_layer(b, &format!("{scope}.conv{conv_i}"), x, shape, filters, kernel, stride, padding)?
            }
            LayerSpec::BatchNorm => {
                if batchnorm {
                    bn_i += 1;
                    let c = shape.channels("batchnorm")?;
                    (b.batchnorm(&format!("{scope}.bn{bn_i}"), x, c)?, shape)
                } else {
                    (x, shape)
                }
            }
            LayerSpec::Relu => (b.relu(x)?, shape),
            LayerSpec::MaxPool { window, stride, padding } => {
                let c = shape.channels("maxpool2d")?;
                let (h, w) = spatial_after("maxpool2d", shape, window, stride, padding)?;
                (b.maxpool(x, window, stride, padding)?, ActShape::Spatial { c, h, w })
            }
            LayerSpec::Block(spec) => {
                block_i += 1;
                walk_block(b, &format!("{scope}.block{block_i}"), x, shape, &spec, batchnorm)?
            }
            LayerSpec::GlobalAvgPool => {
                let c = shape.channels("global_avg_pool")?;
                (b.global_avg_pool(x)?, ActShape::Flat(c))
            }
            LayerSpec::Flatten => (b.flatten(x)?, ActShape::Flat(shape.elements())),
            LayerSpec::Dense { units } => {
                let ActShape::Flat(f) = shape else {
                    return Err(Error::Spec(format!("{scope}: dense layer needs a flat input; add pooling or flatten first")));
                };
                dense_i += 1;
                (b.dense(&format!("{scope}.dense{dense_i}"), x, f, units)?, ActShape::Flat(units))
            }
            LayerSpec::Dropout { rate } => {
                *dropout_index += 1;
                (b.dropout(*dropout_index, x, rate)?, shape)
            }
        };
    }
    Ok((x, shape))
}

pub(crate) fn walk<B: Backend>(spec: &NetworkSpec, b: &mut B, x: B::Act) -> Result<Walk<B::Act>> {
    let (c, h, w) = spec.input_shape;
    let mut shape = ActShape::Spatial { c, h, w };
    let mut x = x;
    let mut stage_shapes = Vec::new();
    let mut dropout_index = 0;
    for stage in &spec.stages {
        (x, shape) = walk_layers(b, &stage.name, &stage.layers, spec.batchnorm, x, shape, &mut dropout_index).map_err(|e| match e {
            Error::Spec(msg) if msg.starts_with(&stage.name) => Error::Spec(msg),
            other => Error::Spec(format!("{}: {other}", stage.name)),
        })?;
        stage_shapes.push((stage.name.clone(), shape));
    }
    (x, shape) = walk_layers(b, "head", &spec.head, spec.batchnorm, x, shape, &mut dropout_index)?;
    Ok(Walk {
        output: x,
        shape,
        stage_shapes,
    })
}

/// A validated network: its spec plus the derived parameter layout.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<(String, Vec<usize>)>,
    stats: Vec<(String, usize)>,
    stage_shapes: Vec<(String, ActShape)>,
    pub bn: BatchNormConfig,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut shapes = ShapeBackend::default();
        let walked = walk(&spec, &mut shapes, ())?;
        if walked.shape != ActShape::Flat(spec.output_dim) {
            return Err(Error::Spec(format!(
                "network output {} does not match output_dim {}",
                walked.shape, spec.output_dim
            )));
        }
        Ok(Self {
            spec,
            params: shapes.params,
            stats: shapes.stats,
            stage_shapes: walked.stage_shapes,
            bn: BatchNormConfig::default(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Trainable parameter names and shapes, in registration order.
    pub fn param_shapes(&self) -> &[(String, Vec<usize>)] {
        &self.params
    }

    pub fn stats_layout(&self) -> &[(String, usize)] {
        &self.stats
    }

    /// Per-sample activation shape after every stage.
    pub fn stage_shapes(&self) -> &[(String, ActShape)] {
        &self.stage_shapes
    }

    pub fn trainable_parameters(&self) -> usize {
        self.params.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Moving mean and variance of every batch-norm layer.
    pub fn non_trainable_parameters(&self) -> usize {
        self.stats.iter().map(|(_, c)| 2 * c).sum()
    }

    /// He-normal kernels (std `sqrt(2 / fan_in)`), zero biases, unit gamma, zero
    /// beta, and running statistics at mean 0 / variance 1. Each tensor draws
    /// from its own stream so the result depends only on `seed`.
    pub fn init_weights<T: Element>(&self, seed: u64) -> Result<(ParamStore<T>, StatsStore<T>)> {
        let mut params = ParamStore::new();
        for (i, (name, shape)) in self.params.iter().enumerate() {
            let t = if name.ends_with(".kernel") || name.ends_with(".weights") {
                let fan_in: usize = if name.ends_with(".kernel") {
                    shape[1..].iter().product()
                } else {
                    shape[0]
                };
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let mut rng = RngStream::new(seed, i as u64).rng();
                Tensor::from_fn(shape, |_| T::from_f64_lossy(normal.sample(&mut rng)))
            } else if name.ends_with(".gamma") {
                Tensor::ones(shape)
            } else {
                Tensor::zeros(shape)
            };
            params.insert(name.clone(), t)?;
        }
        let mut stats = StatsStore::new();
        for (name, c) in &self.stats {
            stats.insert(name.clone(), RunningStats::new(*c))?;
        }
        Ok((params, stats))
    }

    /// Records the forward pass for an NCHW input node and returns the output
    /// node (`N x output_dim`). `dropout` seeds the masks of this pass.
    pub fn forward<'p, T: Element>(
        &self,
        graph: &mut Graph<'p, T>,
        stats: &mut StatsStore<T>,
        input: NodeId,
        dropout: RngStream,
    ) -> Result<NodeId> {
        let (c, h, w) = self.spec.input_shape;
        let shape = graph.value(input).shape();
        if shape.len() != 4 || shape[1..] != [c, h, w] {
            return Err(Error::Graph {
                node: "input".into(),
                detail: format!("expected N x {c} x {h} x {w}, got {shape:?}"),
            });
        }
        let mut backend = GraphBackend {
            graph,
            stats,
            bn: self.bn,
            dropout,
        };
        Ok(walk(&self.spec, &mut backend, input)?.output)
    }

    /// Convenience: forward pass on a batch in `mode`, returning predictions.
    pub fn predict<T: Element>(
        &self,
        params: &ParamStore<T>,
        stats: &mut StatsStore<T>,
        images: Tensor<T>,
        mode: crate::ops::Mode,
        dropout: RngStream,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new(params, mode);
        let x = g.input("images", images);
        let y = self.forward(&mut g, stats, x, dropout)?;
        Ok(g.value(y).clone())
    }

    /// Human-readable architecture manifest.
    pub fn manifest(&self) -> String {
        let spec = &self.spec;
        let mut out = String::new();
        let (c, h, w) = spec.input_shape;
        let _ = writeln!(out, "network: {}", spec.name);
        let _ = writeln!(out, "input: {c}x{h}x{w}");
        let _ = writeln!(out, "output_dim: {} (linear)", spec.output_dim);
        let _ = writeln!(out, "batchnorm: {}", spec.batchnorm);
        for (stage, (_, shape)) in spec.stages.iter().zip(&self.stage_shapes) {
            let layers: Vec<String> = stage.layers.iter().filter_map(|l| describe_layer(l, spec.batchnorm)).collect();
            let _ = writeln!(out, "{}: {} -> {}", stage.name, layers.join(" | "), shape);
        }
        let head: Vec<String> = spec.head.iter().filter_map(|l| describe_layer(l, spec.batchnorm)).collect();
        let _ = writeln!(out, "head: {}", head.join(" | "));
        let _ = writeln!(
            out,
            "residual_blocks: {} convolutional, {} identity",
            spec.count_blocks(BlockKind::Convolutional),
            spec.count_blocks(BlockKind::Identity)
        );
        let _ = writeln!(out, "conv_layers: {}", spec.conv_layer_count());
        let _ = writeln!(out, "dense_layers: {}", spec.dense_layer_count());
        let _ = writeln!(out, "trainable_parameters: {}", self.trainable_parameters());
        let _ = writeln!(out, "non_trainable_parameters: {}", self.non_trainable_parameters());
        out
    }
}

fn describe_layer(layer: &LayerSpec, batchnorm: bool) -> Option<String> {
    let pad = |p: Padding| match p {
        Padding::Same => "same",
        Padding::Valid => "valid",
    };
    Some(match layer {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding,
        } => format!("conv {kernel}x{kernel}/{stride} {filters} {}", pad(*padding)),
        LayerSpec::BatchNorm if batchnorm => "batchnorm".into(),
        LayerSpec::BatchNorm => return None,
        LayerSpec::Relu => "relu".into(),
        LayerSpec::MaxPool { window, stride, padding } => format!("maxpool {window}x{window}/{stride} {}", pad(*padding)),
        LayerSpec::Block(b) => {
            let (f1, f2, f3) = b.filters;
            match b.kind {
                BlockKind::Identity => format!("identity_block ({f1},{f2},{f3}) k{}", b.mid_kernel),
                BlockKind::Convolutional => format!("conv_block ({f1},{f2},{f3}) k{} s{}", b.mid_kernel, b.stride),
            }
        }
        LayerSpec::GlobalAvgPool => "global_avg_pool".into(),
        LayerSpec::Flatten => "flatten".into(),
        LayerSpec::Dense { units } => format!("dense {units}"),
        LayerSpec::Dropout { rate } => format!("dropout {rate}"),
    })
}

/// Parameter names and shapes of a single residual block under `prefix`.
pub fn block_param_shapes(prefix: &str, input_channels: usize, spec: &BlockSpec, batchnorm: bool) -> Result<Vec<(String, Vec<usize>)>> {
    let mut shapes = ShapeBackend::default();
    // spatial extents do not affect parameter shapes
    let shape = ActShape::Spatial {
        c: input_channels,
        h: 8,
        w: 8,
    };
    walk_block(&mut shapes, prefix, (), shape, spec, batchnorm)?;
    Ok(shapes.params)
}

/// Records one residual block into `graph`. Parameters are looked up as
/// `{prefix}.conv_a.kernel` etc. and running statistics as `{prefix}.bn_a`.
pub fn build_block<'p, T: Element>(
    graph: &mut Graph<'p, T>,
    stats: &mut StatsStore<T>,
    prefix: &str,
    input: NodeId,
    spec: &BlockSpec,
    batchnorm: bool,
) -> Result<NodeId> {
    let (_, c, h, w) = graph.value(input).dims4("residual block")?;
    let mut backend = GraphBackend {
        graph,
        stats,
        bn: BatchNormConfig::default(),
        dropout: RngStream::new(0, 0),
    };
    Ok(walk_block(&mut backend, prefix, input, ActShape::Spatial { c, h, w }, spec, batchnorm)?.0)
}

pub fn build_identity_block<'p, T: Element>(
    graph: &mut Graph<'p, T>,
    stats: &mut StatsStore<T>,
    prefix: &str,
    input: NodeId,
    spec: &BlockSpec,
    batchnorm: bool,
) -> Result<NodeId> {
    if spec.kind != BlockKind::Identity {
        return Err(Error::Spec(format!("{prefix}: expected an identity block spec")));
    }
    build_block(graph, stats, prefix, input, spec, batchnorm)
}

pub fn build_conv_block<'p, T: Element>(
    graph: &mut Graph<'p, T>,
    stats: &mut StatsStore<T>,
    prefix: &str,
    input: NodeId,
    spec: &BlockSpec,
    batchnorm: bool,
) -> Result<NodeId> {
    if spec.kind != BlockKind::Convolutional {
        return Err(Error::Spec(format!("{prefix}: expected a convolutional block spec")));
    }
    build_block(graph, stats, prefix, input, spec, batchnorm)
}

/// Parameters and statistics for a standalone block, initialized like a network.
pub fn init_block<T: Element>(
    prefix: &str,
    input_channels: usize,
    spec: &BlockSpec,
    batchnorm: bool,
    seed: u64,
) -> Result<(ParamStore<T>, StatsStore<T>)> {
    let mut params = ParamStore::new();
    let mut stats = StatsStore::new();
    for (i, (name, shape)) in block_param_shapes(prefix, input_channels, spec, batchnorm)?.into_iter().enumerate() {
        let t = if name.ends_with(".kernel") {
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            let mut rng = RngStream::new(seed, i as u64).rng();
            Tensor::from_fn(&shape, |_| T::from_f64_lossy(std * rng.sample::<f64, _>(rand_distr::StandardNormal)))
        } else if name.ends_with(".gamma") {
            Tensor::ones(&shape)
        } else {
            Tensor::zeros(&shape)
        };
        if let Some(bn) = name.strip_suffix(".gamma") {
            stats.insert(bn, RunningStats::new(shape[0]))?;
        }
        params.insert(name, t)?;
    }
    Ok((params, stats))
}
