//! Define-by-run computation graph with reverse-mode accumulation.
//!
//! Every op call evaluates immediately and records a node holding its value
//! plus whatever the backward pass needs. Parameters are borrowed from a
//! [`ParamStore`]; batch-norm running statistics are passed per call so the
//! graph never owns mutable model state.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::store::ParamStore;
use crate::error::{Error, Result};
use crate::ops::{self, norm::BatchNormCache, BatchNormConfig, Mode, Padding, RunningStats};
use crate::rng::RngStream;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layer kinds, used for labelling and targeted fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Input,
    Param,
    Conv2d,
    Dense,
    Relu,
    MaxPool,
    BatchNorm,
    Dropout,
    GlobalAvgPool,
    Add,
    Reshape,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Param => "param",
            OpKind::Conv2d => "conv2d",
            OpKind::Dense => "dense",
            OpKind::Relu => "relu",
            OpKind::MaxPool => "maxpool2d",
            OpKind::BatchNorm => "batchnorm",
            OpKind::Dropout => "dropout",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Add => "add",
            OpKind::Reshape => "reshape",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op<T: Element> {
    Input { name: String },
    Param { name: String },
    Conv2d { input: NodeId, kernel: NodeId, bias: Option<NodeId>, stride: (usize, usize), padding: Padding },
    Dense { input: NodeId, weights: NodeId, bias: NodeId },
    Relu { input: NodeId },
    MaxPool { input: NodeId, argmax: Vec<usize> },
    BatchNorm { input: NodeId, gamma: NodeId, beta: NodeId, cache: BatchNormCache<T> },
    Dropout { input: NodeId, mask: Option<Tensor<T>> },
    GlobalAvgPool { input: NodeId },
    Add { a: NodeId, b: NodeId },
    Reshape { input: NodeId },
}

impl<T: Element> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input { .. } => OpKind::Input,
            Op::Param { .. } => OpKind::Param,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Dense { .. } => OpKind::Dense,
            Op::Relu { .. } => OpKind::Relu,
            Op::MaxPool { .. } => OpKind::MaxPool,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::Add { .. } => OpKind::Add,
            Op::Reshape { .. } => OpKind::Reshape,
        }
    }
}

struct Node<'p, T: Element> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
}

/// Scales the backward output of one op kind. Only used to prove that the
/// gradient checker catches a broken backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fault {
    pub kind: OpKind,
    pub scale: f64,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T: Element> {
    /// One entry per parameter of the bound store, in store order. Parameters the
    /// output does not depend on get zeros.
    pub params: Vec<(String, Tensor<T>)>,
    /// Gradients of named graph inputs.
    pub inputs: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn input(&self, name: &str) -> Option<&Tensor<T>> {
        self.inputs.get(name)
    }
}

pub struct Graph<'p, T: Element = f32> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<'p, T>>,
    mode: Mode,
    fault: Option<Fault>,
}

impl<'p, T: Element> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>, mode: Mode) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            mode,
            fault: None,
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Graph {
                node: format!("#{}", id.0),
                detail: "node id does not belong to this graph".into(),
            });
        }
        Ok(())
    }

    fn wrap<V>(&self, label: &str, res: Result<V>) -> Result<V> {
        res.map_err(|e| Error::Graph {
            node: format!("{label} (node #{})", self.nodes.len()),
            detail: e.to_string(),
        })
    }

    pub fn input(&mut self, name: impl Into<String>, value: Tensor<T>) -> NodeId {
        self.push(Cow::Owned(value), Op::Input { name: name.into() })
    }

    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let store = self.store;
        let value = store.get(name).ok_or_else(|| Error::Graph {
            node: name.to_string(),
            detail: "parameter is not bound in the store".into(),
        })?;
        Ok(self.push(Cow::Borrowed(value), Op::Param { name: name.to_string() }))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<NodeId> {
        self.check(input)?;
        self.check(kernel)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let out = ops::conv2d_forward(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        );
        let out = self.wrap("conv2d", out)?;
        Ok(self.push(Cow::Owned(out), Op::Conv2d { input, kernel, bias, stride, padding }))
    }

    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        for id in [input, weights, bias] {
            self.check(id)?;
        }
        let out = ops::dense(self.value(input), self.value(weights), self.value(bias));
        let out = self.wrap("dense", out)?;
        Ok(self.push(Cow::Owned(out), Op::Dense { input, weights, bias }))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let out = ops::relu(self.value(input));
        Ok(self.push(Cow::Owned(out), Op::Relu { input }))
    }

    pub fn maxpool2d(&mut self, input: NodeId, window: (usize, usize), stride: usize, padding: Padding) -> Result<NodeId> {
        self.check(input)?;
        let pooled = ops::maxpool2d(self.value(input), window, stride, padding);
        let pooled = self.wrap("maxpool2d", pooled)?;
        Ok(self.push(
            Cow::Owned(pooled.output),
            Op::MaxPool {
                input,
                argmax: pooled.argmax,
            },
        ))
    }

    /// Batch normalization in the graph's mode; train mode updates `stats`.
    pub fn batchnorm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &mut RunningStats<T>,
        config: &BatchNormConfig,
    ) -> Result<NodeId> {
        for id in [input, gamma, beta] {
            self.check(id)?;
        }
        let out = ops::batchnorm(self.value(input), self.value(gamma), self.value(beta), self.mode, stats, config);
        let out = self.wrap("batchnorm", out)?;
        Ok(self.push(
            Cow::Owned(out.output),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                cache: out.cache,
            },
        ))
    }

    pub fn dropout(&mut self, input: NodeId, rate: f64, stream: RngStream) -> Result<NodeId> {
        self.check(input)?;
        let out = ops::dropout(self.value(input), rate, self.mode, stream);
        let (out, mask) = self.wrap("dropout", out)?;
        Ok(self.push(Cow::Owned(out), Op::Dropout { input, mask }))
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let out = ops::global_avg_pool(self.value(input));
        let out = self.wrap("global_avg_pool", out)?;
        Ok(self.push(Cow::Owned(out), Op::GlobalAvgPool { input }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let out = ops::add(self.value(a), self.value(b));
        let out = self.wrap("add", out)?;
        Ok(self.push(Cow::Owned(out), Op::Add { a, b }))
    }

    /// Collapses all but the leading axis: `N x ... -> N x F`.
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let v = self.value(input);
        let n = v.shape()[0];
        let f = v.len() / n;
        let out = v.clone().reshape(&[n, f])?;
        Ok(self.push(Cow::Owned(out), Op::Reshape { input }))
    }

    fn faulted(&self, kind: OpKind, mut t: Tensor<T>) -> Tensor<T> {
        if let Some(f) = self.fault {
            if f.kind == kind {
                let s = T::from_f64_lossy(f.scale);
                t.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        t
    }

    /// Reverse-mode sweep from `output`, seeded with `loss_grad` (dLoss/dOutput).
    pub fn backward(&self, output: NodeId, loss_grad: &Tensor<T>) -> Result<Gradients<T>> {
        if self.mode != Mode::Train {
            return Err(Error::State(
                "backward requires a forward pass recorded in train mode".into(),
            ));
        }
        self.check(output)?;
        if loss_grad.shape() != self.value(output).shape() {
            return Err(Error::dim(
                "backward",
                format!(
                    "loss gradient shape {:?} does not match output shape {:?}",
                    loss_grad.shape(),
                    self.value(output).shape()
                ),
            ));
        }

        let mut adjoints: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoints[output.0] = Some(loss_grad.clone());
        let mut param_grads: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();
        let mut input_grads: BTreeMap<String, Tensor<T>> = BTreeMap::new();

        fn acc<T: Element>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
            match slot {
                Some(existing) => existing.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(grad) = adjoints[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input { name } => match input_grads.get_mut(name) {
                    Some(existing) => existing.add_assign(&grad)?,
                    None => {
                        input_grads.insert(name.clone(), grad);
                    }
                },
                Op::Param { name } => {
                    let pos = self.store.position(name).expect("param nodes come from the store");
                    acc(&mut param_grads[pos], grad)?;
                }
                Op::Conv2d { input, kernel, bias, stride, padding } => {
                    let g = ops::conv2d_backward(self.value(*input), self.value(*kernel), &grad, *stride, *padding)?;
                    acc(&mut adjoints[input.0], self.faulted(OpKind::Conv2d, g.input))?;
                    acc(&mut adjoints[kernel.0], self.faulted(OpKind::Conv2d, g.kernel))?;
                    if let Some(b) = bias {
                        acc(&mut adjoints[b.0], self.faulted(OpKind::Conv2d, g.bias))?;
                    }
                }
                Op::Dense { input, weights, bias } => {
                    let g = ops::dense_backward(self.value(*input), self.value(*weights), &grad)?;
                    acc(&mut adjoints[input.0], self.faulted(OpKind::Dense, g.input))?;
                    acc(&mut adjoints[weights.0], self.faulted(OpKind::Dense, g.weights))?;
                    acc(&mut adjoints[bias.0], self.faulted(OpKind::Dense, g.bias))?;
                }
                Op::Relu { input } => {
                    let g = ops::relu_backward(self.value(*input), &grad)?;
                    acc(&mut adjoints[input.0], self.faulted(OpKind::Relu, g))?;
                }
                Op::MaxPool { input, argmax } => {
                    let g = ops::maxpool2d_backward(self.value(*input).shape(), argmax, &grad)?;
                    acc(&mut adjoints[input.0], self.faulted(OpKind::MaxPool, g))?;
                }
                Op::BatchNorm { input, gamma, beta, cache } => {
                    let g = ops::batchnorm_backward(cache, self.value(*gamma), &grad)?;
                    acc(&mut adjoints[input.0], self.faulted(OpKind::BatchNorm, g.input))?;
                    acc(&mut adjoints[gamma.0], self.faulted(OpKind::BatchNorm, g.gamma))?;
                    acc(&mut adjoints[beta.0], self.faulted(OpKind::BatchNorm, g.beta))?;
                }
                Op::Dropout { input, mask } => {
                    let g = match mask {
                        Some(m) => ops::dropout::apply_mask(&grad, m)?,
                        None => grad,
                    };
                    acc(&mut adjoints[input.0], self.faulted(OpKind::Dropout, g))?;
                }
                Op::GlobalAvgPool { input } => {
                    let g = ops::global_avg_pool_backward(self.value(*input).shape(), &grad)?;
                    acc(&mut adjoints[input.0], self.faulted(OpKind::GlobalAvgPool, g))?;
                }
                Op::Add { a, b } => {
                    let gb = self.faulted(OpKind::Add, grad.clone());
                    acc(&mut adjoints[a.0], self.faulted(OpKind::Add, grad))?;
                    acc(&mut adjoints[b.0], gb)?;
                }
                Op::Reshape { input } => {
                    let g = grad.reshape(self.value(*input).shape())?;
                    acc(&mut adjoints[input.0], g)?;
                }
            }
        }

        let params = self
            .store
            .iter()
            .zip(param_grads)
            .map(|((name, t), g)| (name.to_string(), g.unwrap_or_else(|| Tensor::zeros(t.shape()))))
            .collect();
        Ok(Gradients {
            params,
            inputs: input_grads,
        })
    }
}
