//! Reverse-mode differentiation over a recorded graph of tensor operations.
//!
//! A [`Graph`] is built once by calling the op methods, which append nodes in
//! topological order. [`Graph::forward_eval`] binds the named inputs and
//! evaluates every node, retaining all intermediates; [`Graph::backward`] then
//! sweeps the nodes in reverse and returns a [`GradientMap`] keyed by
//! parameter name.
//!
//! Complex values appear only as intermediates. Complex parameters are held
//! as two real leaves and joined with [`Graph::complex_from_parts`], so every
//! gradient returned to the caller is real.

mod gradcheck;
pub(crate) mod kernels;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::satse::{self, MaskIndexMode, MaskSide};
use crate::spectral::{transform_last_axis, Direction};
use crate::tensor::{DType, Tensor};

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};
use kernels::ConvGeom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

/// Statistics source for a batch-normalization node.
#[derive(Debug, Clone, PartialEq)]
pub enum NormStats {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with fixed running statistics.
    Running { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Parameter(String),
    Constant,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    ScalarMul {
        scalar: NodeId,
        x: NodeId,
    },
    Sum(NodeId),
    Relu(NodeId),
    Conv1d {
        x: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        eps: f64,
        stats: NormStats,
    },
    MaxPool1d {
        x: NodeId,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AdaptivePool {
        x: NodeId,
        kind: PoolKind,
    },
    Concat(NodeId, NodeId),
    Linear {
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Softmax(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: NodeId,
    },
    ToComplex(NodeId),
    ComplexFromParts(NodeId, NodeId),
    RealPart(NodeId),
    Dft(NodeId),
    Idft(NodeId),
    SoftMask {
        phi: NodeId,
        gamma: NodeId,
        len: usize,
        side: MaskSide,
        mode: MaskIndexMode,
    },
    MaskMul {
        mask: NodeId,
        x: NodeId,
    },
    ComplexMul {
        weight: NodeId,
        x: NodeId,
    },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Parameter(_) => "parameter",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ScalarMul { .. } => "scalar_mul",
            Op::Sum(_) => "sum",
            Op::Relu(_) => "relu",
            Op::Conv1d { .. } => "conv1d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::MaxPool1d { .. } => "max_pool1d",
            Op::AdaptivePool { .. } => "adaptive_pool",
            Op::Concat(..) => "concat",
            Op::Linear { .. } => "linear",
            Op::Softmax(_) => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::ToComplex(_) => "to_complex",
            Op::ComplexFromParts(..) => "complex_from_parts",
            Op::RealPart(_) => "real_part",
            Op::Dft(_) => "dft",
            Op::Idft(_) => "idft",
            Op::SoftMask { .. } => "soft_mask",
            Op::MaskMul { .. } => "mask_mul",
            Op::ComplexMul { .. } => "complex_mul",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Parameter(_) | Op::Constant => vec![],
            Op::Add(a, b) | Op::Mul(a, b) | Op::Concat(a, b) | Op::ComplexFromParts(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Relu(x)
            | Op::Softmax(x)
            | Op::ToComplex(x)
            | Op::RealPart(x)
            | Op::Dft(x)
            | Op::Idft(x) => vec![*x],
            Op::ScalarMul { scalar, x } => vec![*scalar, *x],
            Op::Conv1d { x, weight, bias, .. } => {
                let mut v = vec![*x, *weight];
                v.extend(bias);
                v
            }
            Op::BatchNorm { x, scale, shift, .. } => vec![*x, *scale, *shift],
            Op::MaxPool1d { x, .. } | Op::AdaptivePool { x, .. } => vec![*x],
            Op::Linear { x, weight, bias } => vec![*x, *weight, *bias],
            Op::CrossEntropy { logits, labels } => vec![*logits, *labels],
            Op::SoftMask { phi, gamma, .. } => vec![*phi, *gamma],
            Op::MaskMul { mask, x } => vec![*mask, *x],
            Op::ComplexMul { weight, x } => vec![*weight, *x],
        }
    }
}

#[derive(Debug, Clone, Default)]
enum Aux {
    #[default]
    None,
    Argmax(Vec<usize>),
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Probs(Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    label: String,
    needs_grad: bool,
    value: Option<Tensor>,
    declared_shape: Vec<usize>,
    aux: Aux,
}

/// Batch statistics recorded by a batch-normalization node during the last forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStatistics {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct GradientMap {
    pub entries: BTreeMap<String, Tensor>,
    /// Parameters whose gradient contains NaN or infinity.
    pub non_finite: Vec<String>,
}

impl GradientMap {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn is_finite(&self) -> bool {
        self.non_finite.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
    inputs: BTreeMap<String, NodeId>,
    output: Option<NodeId>,
    scope: String,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Label prefix attached to nodes created from now on (shows up in errors).
    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    fn push(&mut self, op: Op, value: Option<Tensor>, declared_shape: Vec<usize>) -> NodeId {
        let needs_grad = match &op {
            Op::Parameter(_) => true,
            Op::Input | Op::Constant => false,
            other => other.inputs().iter().any(|i| self.nodes[i.0].needs_grad),
        };
        let id = NodeId(self.nodes.len());
        let label = if self.scope.is_empty() {
            format!("node {} ({})", id.0, op.kind())
        } else {
            format!("node {} ({} @ {})", id.0, op.kind(), self.scope)
        };
        self.nodes.push(Node {
            op,
            label,
            needs_grad,
            value,
            declared_shape,
            aux: Aux::None,
        });
        self.output = Some(id);
        id
    }

    fn push_op(&mut self, op: Op) -> NodeId {
        self.push(op, None, Vec::new())
    }

    /// Placeholder bound by name in [`Graph::forward_eval`].
    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        let id = self.push(Op::Input, None, shape.to_vec());
        self.inputs.insert(name.to_string(), id);
        id
    }

    /// Trainable real leaf. Names must be unique.
    pub fn parameter(&mut self, name: &str, value: Tensor) -> NodeId {
        assert!(
            !value.is_complex(),
            "parameters are real; pair complex values with complex_from_parts"
        );
        assert!(!self.params.contains_key(name), "duplicate parameter name {name}");
        let shape = value.shape().to_vec();
        let id = self.push(Op::Parameter(name.to_string()), Some(value), shape);
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant, Some(value), shape)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push_op(Op::Add(a, b))
    }
    /// Elementwise product of two real tensors of equal shape.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push_op(Op::Mul(a, b))
    }
    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.push_op(Op::Scale(x, factor))
    }
    /// Product of a rank-0 real node with a real tensor.
    pub fn scalar_mul(&mut self, scalar: NodeId, x: NodeId) -> NodeId {
        self.push_op(Op::ScalarMul { scalar, x })
    }
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push_op(Op::Sum(x))
    }
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push_op(Op::Relu(x))
    }
    pub fn conv1d(&mut self, x: NodeId, weight: NodeId, bias: Option<NodeId>, stride: usize, padding: usize) -> NodeId {
        self.push_op(Op::Conv1d {
            x,
            weight,
            bias,
            stride,
            padding,
        })
    }
    pub fn batch_norm(&mut self, x: NodeId, scale: NodeId, shift: NodeId, eps: f64, stats: NormStats) -> NodeId {
        self.push_op(Op::BatchNorm {
            x,
            scale,
            shift,
            eps,
            stats,
        })
    }
    pub fn max_pool1d(&mut self, x: NodeId, kernel: usize, stride: usize, padding: usize) -> NodeId {
        self.push_op(Op::MaxPool1d {
            x,
            kernel,
            stride,
            padding,
        })
    }
    /// Reduces `(B, C, L)` to `(B, C)`.
    pub fn adaptive_pool(&mut self, x: NodeId, kind: PoolKind) -> NodeId {
        self.push_op(Op::AdaptivePool { x, kind })
    }
    /// Concatenates two `(B, n)` tensors along the feature axis.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push_op(Op::Concat(a, b))
    }
    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        self.push_op(Op::Linear { x, weight, bias })
    }
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        self.push_op(Op::Softmax(x))
    }
    /// Mean negative log-likelihood of integer `labels` (a `(B)` real tensor) under softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: NodeId) -> NodeId {
        self.push_op(Op::CrossEntropy { logits, labels })
    }
    pub fn to_complex(&mut self, x: NodeId) -> NodeId {
        self.push_op(Op::ToComplex(x))
    }
    pub fn complex_from_parts(&mut self, re: NodeId, im: NodeId) -> NodeId {
        self.push_op(Op::ComplexFromParts(re, im))
    }
    pub fn real_part(&mut self, x: NodeId) -> NodeId {
        self.push_op(Op::RealPart(x))
    }
    /// Unnormalized forward transform along the last axis.
    pub fn dft(&mut self, x: NodeId) -> NodeId {
        self.push_op(Op::Dft(x))
    }
    /// Inverse transform (with `1/L`) along the last axis.
    pub fn idft(&mut self, x: NodeId) -> NodeId {
        self.push_op(Op::Idft(x))
    }
    /// Length-`len` sigmoid frequency mask driven by rank-0 `phi` and `gamma` nodes.
    pub fn soft_mask(&mut self, phi: NodeId, gamma: NodeId, len: usize, side: MaskSide, mode: MaskIndexMode) -> NodeId {
        self.push_op(Op::SoftMask {
            phi,
            gamma,
            len,
            side,
            mode,
        })
    }
    /// Scales each bin of a complex `(..., L)` tensor by a real `(L)` mask.
    pub fn mask_mul(&mut self, mask: NodeId, x: NodeId) -> NodeId {
        self.push_op(Op::MaskMul { mask, x })
    }
    /// Multiplies a complex `(B, C, L)` tensor by a complex `(C, L)` weight, broadcast over B.
    pub fn complex_mul(&mut self, weight: NodeId, x: NodeId) -> NodeId {
        self.push_op(Op::ComplexMul { weight, x })
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn parameter_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn parameter_value(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|id| self.nodes[id.0].value.as_ref())
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set_parameter(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = *self
            .params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        let node = &mut self.nodes[id.0];
        if node.declared_shape != value.shape() || value.is_complex() {
            return Err(Error::shape(
                node.label.clone(),
                format!("expected real {:?}, got {:?}", node.declared_shape, value.shape()),
            ));
        }
        node.value = Some(value);
        Ok(())
    }

    pub(crate) fn parameter_data_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let id = *self.params.get(name)?;
        self.nodes[id.0].value.as_mut().map(|t| t.data_mut())
    }

    /// Value computed for a node by the last forward pass.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|n| n.value.as_ref())
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    /// Batch statistics of a batch-normalization node that ran in batch mode.
    pub fn batch_statistics(&self, id: NodeId) -> Option<BatchStatistics> {
        let node = self.nodes.get(id.0)?;
        match (&node.aux, &node.op) {
            (
                Aux::Norm { mean, var, .. },
                Op::BatchNorm {
                    stats: NormStats::Batch,
                    ..
                },
            ) => {
                let shape = node.value.as_ref()?.shape();
                Some(BatchStatistics {
                    mean: mean.clone(),
                    var: var.clone(),
                    count: shape[0] * shape[2],
                })
            }
            _ => None,
        }
    }

    /// Binds named inputs, evaluates every node and returns the output node's value.
    pub fn forward_eval(&mut self, inputs: &[(&str, Tensor)]) -> Result<Tensor> {
        for (name, tensor) in inputs {
            let id = *self
                .inputs
                .get(*name)
                .ok_or_else(|| Error::invalid(format!("graph has no input named {name}")))?;
            let node = &mut self.nodes[id.0];
            if node.declared_shape != tensor.shape() {
                return Err(Error::shape(
                    format!("{} '{}'", node.label, name),
                    format!("expected {:?}, got {:?}", node.declared_shape, tensor.shape()),
                ));
            }
            node.value = Some(tensor.clone());
        }
        for (name, id) in &self.inputs {
            if self.nodes[id.0].value.is_none() {
                return Err(Error::invalid(format!("input {name} was not provided")));
            }
        }
        self.recompute()?;
        let out = self.output.ok_or_else(|| Error::invalid("graph is empty"))?;
        Ok(self.nodes[out.0].value.clone().expect("evaluated"))
    }

    /// Re-evaluates all non-leaf nodes with the currently bound inputs and parameters.
    pub(crate) fn recompute(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            let (done, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if matches!(node.op, Op::Input | Op::Parameter(_) | Op::Constant) {
                if node.value.is_none() {
                    return Err(Error::invalid(format!("{} has no value", node.label)));
                }
                continue;
            }
            let (value, aux) = eval_node(&node.op, done).map_err(|detail| Error::shape(node.label.clone(), detail))?;
            node.value = Some(value);
            node.aux = aux;
        }
        Ok(())
    }

    /// Gradients of a real scalar node with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap> {
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::invalid("loss node out of range"))?;
        let loss_value = loss_node
            .value
            .as_ref()
            .ok_or_else(|| Error::invalid("backward called before forward_eval"))?;
        if loss_value.is_complex() || loss_value.numel() != 1 {
            return Err(Error::invalid(format!(
                "loss must be a real scalar, {} has shape {:?}",
                loss_node.label,
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));
        let mut map = GradientMap::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Parameter(name) = &node.op {
                if !g.is_finite() {
                    map.non_finite.push(name.clone());
                }
                map.entries.insert(name.clone(), g);
                continue;
            }
            for (input, contribution) in backward_node(node, &self.nodes, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        for (name, id) in &self.params {
            map.entries
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&self.nodes[id.0].declared_shape));
        }
        map.non_finite.sort();
        Ok(map)
    }
}

fn val(nodes: &[Node], id: NodeId) -> &Tensor {
    nodes[id.0]
        .value
        .as_ref()
        .expect("inputs are evaluated before their consumers")
}

fn expect_real(t: &Tensor, what: &str) -> Result<(), String> {
    if t.is_complex() {
        Err(format!("{what} must be real"))
    } else {
        Ok(())
    }
}

fn expect_complex(t: &Tensor, what: &str) -> Result<(), String> {
    if t.is_complex() {
        Ok(())
    } else {
        Err(format!("{what} must be complex"))
    }
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<(), String> {
    if t.rank() == rank {
        Ok(())
    } else {
        Err(format!("{what} must have rank {rank}, got shape {:?}", t.shape()))
    }
}

fn expect_scalar(t: &Tensor, what: &str) -> Result<(), String> {
    if !t.is_complex() && t.numel() == 1 {
        Ok(())
    } else {
        Err(format!("{what} must be a real scalar, got shape {:?}", t.shape()))
    }
}

fn real(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::from_vec(shape, data).expect("kernel output matches shape")
}

fn complex(shape: &[usize], data: Vec<f64>) -> Tensor {
    let mut t = Tensor::complex_zeros(shape);
    t.data_mut().copy_from_slice(&data);
    t
}

fn conv_geom(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<ConvGeom, String> {
    expect_rank(x, 3, "conv input")?;
    expect_rank(w, 3, "conv kernel")?;
    let (batch, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kc_in, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if c_in != kc_in {
        return Err(format!("input has {c_in} channels, kernel expects {kc_in}"));
    }
    let out_len = kernels::window_out_len(len, kernel, stride, padding)
        .ok_or_else(|| format!("length {len} too short for kernel {kernel} (padding {padding}, stride {stride})"))?;
    Ok(ConvGeom {
        batch,
        c_in,
        len,
        c_out,
        kernel,
        stride,
        padding,
        out_len,
    })
}

fn eval_node(op: &Op, nodes: &[Node]) -> Result<(Tensor, Aux), String> {
    let out = match op {
        Op::Input | Op::Parameter(_) | Op::Constant => unreachable!("leaves are not evaluated"),
        Op::Add(a, b) => {
            let (a, b) = (val(nodes, *a), val(nodes, *b));
            if a.shape() != b.shape() || a.dtype() != b.dtype() {
                return Err(format!("operands {:?} and {:?} differ", a.shape(), b.shape()));
            }
            let mut out = a.clone();
            out.add_assign(b);
            out
        }
        Op::Mul(a, b) => {
            let (a, b) = (val(nodes, *a), val(nodes, *b));
            expect_real(a, "mul operand")?;
            expect_real(b, "mul operand")?;
            if a.shape() != b.shape() {
                return Err(format!("operands {:?} and {:?} differ", a.shape(), b.shape()));
            }
            real(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect())
        }
        Op::Scale(x, f) => val(nodes, *x).map(|v| v * f),
        Op::ScalarMul { scalar, x } => {
            let (s, x) = (val(nodes, *scalar), val(nodes, *x));
            expect_scalar(s, "scalar factor")?;
            expect_real(x, "scaled tensor")?;
            let s = s.item();
            x.map(|v| s * v)
        }
        Op::Sum(x) => {
            let x = val(nodes, *x);
            expect_real(x, "sum operand")?;
            Tensor::scalar(x.data().iter().sum())
        }
        Op::Relu(x) => {
            let x = val(nodes, *x);
            expect_real(x, "relu input")?;
            x.map(|v| if v > 0.0 { v } else { 0.0 })
        }
        Op::Conv1d {
            x,
            weight,
            bias,
            stride,
            padding,
        } => {
            let (x, w) = (val(nodes, *x), val(nodes, *weight));
            let g = conv_geom(x, w, *stride, *padding)?;
            let b = match bias {
                Some(b) => {
                    let b = val(nodes, *b);
                    if b.shape() != [g.c_out] {
                        return Err(format!("bias shape {:?} != [{}]", b.shape(), g.c_out));
                    }
                    Some(b.data())
                }
                None => None,
            };
            real(
                &[g.batch, g.c_out, g.out_len],
                kernels::conv1d_forward(x.data(), w.data(), b, g),
            )
        }
        Op::BatchNorm {
            x,
            scale,
            shift,
            eps,
            stats,
        } => {
            let (x, scale, shift) = (val(nodes, *x), val(nodes, *scale), val(nodes, *shift));
            expect_rank(x, 3, "batch norm input")?;
            let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            if scale.shape() != [c] || shift.shape() != [c] {
                return Err(format!("affine parameters must have shape [{c}]"));
            }
            let (mean, var) = match stats {
                NormStats::Batch => {
                    if b * l < 2 {
                        return Err("batch statistics need at least two values per channel".into());
                    }
                    kernels::channel_stats(x.data(), b, c, l)
                }
                NormStats::Running { mean, var } => {
                    if mean.len() != c || var.len() != c {
                        return Err(format!("running statistics must have {c} channels"));
                    }
                    (mean.clone(), var.clone())
                }
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let xhat = kernels::normalize(x.data(), &mean, &inv_std, b, c, l);
            let y = kernels::affine(&xhat, scale.data(), shift.data(), b, c, l);
            return Ok((
                real(x.shape(), y),
                Aux::Norm {
                    xhat,
                    inv_std,
                    mean,
                    var,
                },
            ));
        }
        Op::MaxPool1d {
            x,
            kernel,
            stride,
            padding,
        } => {
            let x = val(nodes, *x);
            expect_rank(x, 3, "max pool input")?;
            if *padding >= *kernel {
                return Err(format!("padding {padding} must be smaller than kernel {kernel}"));
            }
            let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let out_len = kernels::window_out_len(l, *kernel, *stride, *padding)
                .ok_or_else(|| format!("length {l} too short for pooling window {kernel}"))?;
            let (v, arg) = kernels::max_pool_forward(x.data(), b * c, l, *kernel, *stride, *padding, out_len);
            return Ok((real(&[b, c, out_len], v), Aux::Argmax(arg)));
        }
        Op::AdaptivePool { x, kind } => {
            let x = val(nodes, *x);
            expect_rank(x, 3, "adaptive pool input")?;
            let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            if l == 0 {
                return Err("cannot pool an empty length axis".into());
            }
            let rows = x.data().chunks_exact(l);
            match kind {
                PoolKind::Avg => real(&[b, c], rows.map(|r| r.iter().sum::<f64>() / l as f64).collect()),
                PoolKind::Max => {
                    let mut vals = Vec::with_capacity(b * c);
                    let mut arg = Vec::with_capacity(b * c);
                    for (ri, r) in rows.enumerate() {
                        let mut best = 0;
                        for (i, v) in r.iter().enumerate() {
                            if *v > r[best] {
                                best = i;
                            }
                        }
                        vals.push(r[best]);
                        arg.push(ri * l + best);
                    }
                    return Ok((real(&[b, c], vals), Aux::Argmax(arg)));
                }
            }
        }
        Op::Concat(a, b) => {
            let (a, b) = (val(nodes, *a), val(nodes, *b));
            expect_rank(a, 2, "concat operand")?;
            expect_rank(b, 2, "concat operand")?;
            expect_real(a, "concat operand")?;
            expect_real(b, "concat operand")?;
            if a.shape()[0] != b.shape()[0] {
                return Err("concat operands disagree on batch size".into());
            }
            let (n, wa, wb) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut data = Vec::with_capacity(n * (wa + wb));
            for i in 0..n {
                data.extend_from_slice(&a.data()[i * wa..(i + 1) * wa]);
                data.extend_from_slice(&b.data()[i * wb..(i + 1) * wb]);
            }
            real(&[n, wa + wb], data)
        }
        Op::Linear { x, weight, bias } => {
            let (x, w, b) = (val(nodes, *x), val(nodes, *weight), val(nodes, *bias));
            expect_rank(x, 2, "linear input")?;
            expect_rank(w, 2, "linear weight")?;
            let (n, n_in, n_out) = (x.shape()[0], x.shape()[1], w.shape()[0]);
            if w.shape()[1] != n_in || b.shape() != [n_out] {
                return Err(format!(
                    "input width {n_in} incompatible with weight {:?} / bias {:?}",
                    w.shape(),
                    b.shape()
                ));
            }
            let mut out = vec![0.0; n * n_out];
            for i in 0..n {
                let xr = &x.data()[i * n_in..][..n_in];
                for o in 0..n_out {
                    let wr = &w.data()[o * n_in..][..n_in];
                    out[i * n_out + o] = b.data()[o] + xr.iter().zip(wr).map(|(a, c)| a * c).sum::<f64>();
                }
            }
            real(&[n, n_out], out)
        }
        Op::Softmax(x) => {
            let x = val(nodes, *x);
            expect_rank(x, 2, "softmax input")?;
            let k = x.shape()[1];
            let mut out = Vec::with_capacity(x.numel());
            for r in x.data().chunks_exact(k) {
                out.extend(softmax_row(r));
            }
            real(x.shape(), out)
        }
        Op::CrossEntropy { logits, labels } => {
            let (z, y) = (val(nodes, *logits), val(nodes, *labels));
            expect_rank(z, 2, "logits")?;
            let (n, k) = (z.shape()[0], z.shape()[1]);
            if y.shape() != [n] {
                return Err(format!("labels shape {:?} != [{n}]", y.shape()));
            }
            let labels = label_indices(y, k)?;
            let mut loss = 0.0;
            let mut probs = Vec::with_capacity(n * k);
            for (r, &label) in z.data().chunks_exact(k).zip(&labels) {
                let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                loss += lse - r[label];
                probs.extend(r.iter().map(|v| (v - lse).exp()));
            }
            return Ok((Tensor::scalar(loss / n as f64), Aux::Probs(probs)));
        }
        Op::ToComplex(x) => {
            let x = val(nodes, *x);
            expect_real(x, "to_complex input")?;
            x.to_complex()
        }
        Op::ComplexFromParts(a, b) => {
            Tensor::complex_from_parts(val(nodes, *a), val(nodes, *b)).map_err(|e| e.to_string())?
        }
        Op::RealPart(x) => {
            let x = val(nodes, *x);
            expect_complex(x, "real_part input")?;
            x.re()
        }
        Op::Dft(x) => transform_last_axis(val(nodes, *x), Direction::Forward).map_err(|e| e.to_string())?,
        Op::Idft(x) => transform_last_axis(val(nodes, *x), Direction::Inverse).map_err(|e| e.to_string())?,
        Op::SoftMask {
            phi,
            gamma,
            len,
            side,
            mode,
        } => {
            let (phi, gamma) = (val(nodes, *phi), val(nodes, *gamma));
            expect_scalar(phi, "phi")?;
            expect_scalar(gamma, "gamma")?;
            let (phi, gamma) = (phi.item(), gamma.item());
            real(
                &[*len],
                (0..*len)
                    .map(|j| satse::soft_mask(j, phi, gamma, *len, *side, *mode))
                    .collect(),
            )
        }
        Op::MaskMul { mask, x } => {
            let (m, x) = (val(nodes, *mask), val(nodes, *x));
            expect_real(m, "mask")?;
            expect_complex(x, "masked spectrum")?;
            let l = m.numel();
            if m.rank() != 1 || x.shape().last() != Some(&l) {
                return Err(format!("mask {:?} does not match spectrum {:?}", m.shape(), x.shape()));
            }
            let mut out = x.clone();
            for row in out.data_mut().chunks_exact_mut(2 * l) {
                for (pair, mv) in row.chunks_exact_mut(2).zip(m.data()) {
                    pair[0] *= mv;
                    pair[1] *= mv;
                }
            }
            out
        }
        Op::ComplexMul { weight, x } => {
            let (w, x) = (val(nodes, *weight), val(nodes, *x));
            expect_complex(w, "spectral weight")?;
            expect_complex(x, "spectrum")?;
            if x.rank() != 3 || w.shape() != &x.shape()[1..] {
                return Err(format!(
                    "weight {:?} does not match spectrum {:?}",
                    w.shape(),
                    x.shape()
                ));
            }
            let per = w.data().len();
            let mut out = x.clone();
            for block in out.data_mut().chunks_exact_mut(per) {
                for (pair, wp) in block.chunks_exact_mut(2).zip(w.data().chunks_exact(2)) {
                    let (a, b) = (pair[0], pair[1]);
                    pair[0] = wp[0] * a - wp[1] * b;
                    pair[1] = wp[0] * b + wp[1] * a;
                }
            }
            out
        }
    };
    Ok((out, Aux::None))
}

pub(crate) fn softmax_row(r: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = r.iter().map(|v| (v - m).exp()).sum();
    r.iter().map(move |v| (v - m).exp() / denom)
}

fn label_indices(y: &Tensor, classes: usize) -> Result<Vec<usize>, String> {
    y.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < classes {
                Ok(v as usize)
            } else {
                Err(format!("label {v} is not a class index in [0, {classes})"))
            }
        })
        .collect()
}

/// Contributions of `grad` (w.r.t. this node's output) to each input.
fn backward_node(node: &Node, nodes: &[Node], grad: &Tensor) -> Vec<(NodeId, Tensor)> {
    let needs = |id: &NodeId| nodes[id.0].needs_grad;
    let out = node.value.as_ref().expect("forward ran");
    match &node.op {
        Op::Input | Op::Parameter(_) | Op::Constant => vec![],
        Op::Add(a, b) => vec![(*a, grad.clone()), (*b, grad.clone())],
        Op::Mul(a, b) => {
            let (av, bv) = (val(nodes, *a), val(nodes, *b));
            let ga = real(
                av.shape(),
                grad.data().iter().zip(bv.data()).map(|(g, v)| g * v).collect(),
            );
            let gb = real(
                bv.shape(),
                grad.data().iter().zip(av.data()).map(|(g, v)| g * v).collect(),
            );
            vec![(*a, ga), (*b, gb)]
        }
        Op::Scale(x, f) => vec![(*x, grad.map(|g| g * f))],
        Op::ScalarMul { scalar, x } => {
            let (s, xv) = (val(nodes, *scalar), val(nodes, *x));
            let gs: f64 = grad.data().iter().zip(xv.data()).map(|(g, v)| g * v).sum();
            let sv = s.item();
            vec![(*scalar, real(s.shape(), vec![gs])), (*x, grad.map(|g| g * sv))]
        }
        Op::Sum(x) => vec![(*x, Tensor::full(val(nodes, *x).shape(), grad.item()))],
        Op::Relu(x) => {
            let gx = grad
                .data()
                .iter()
                .zip(out.data())
                .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                .collect();
            vec![(*x, real(out.shape(), gx))]
        }
        Op::Conv1d {
            x,
            weight,
            bias,
            stride,
            padding,
        } => {
            let (xv, wv) = (val(nodes, *x), val(nodes, *weight));
            let geom = conv_geom(xv, wv, *stride, *padding).expect("validated in forward");
            let (gx, gw, gb) = kernels::conv1d_backward(xv.data(), wv.data(), grad.data(), geom, needs(x));
            let mut res = vec![(*weight, real(wv.shape(), gw))];
            if let Some(gx) = gx {
                res.push((*x, real(xv.shape(), gx)));
            }
            if let Some(b) = bias {
                res.push((*b, real(&[geom.c_out], gb)));
            }
            res
        }
        Op::BatchNorm {
            x, scale, shift, stats, ..
        } => {
            let Aux::Norm { xhat, inv_std, .. } = &node.aux else {
                unreachable!("batch norm keeps its statistics")
            };
            let sv = val(nodes, *scale);
            let (b, c, l) = (out.shape()[0], out.shape()[1], out.shape()[2]);
            let (sum_g, sum_gx) = kernels::channel_grad_sums(grad.data(), xhat, b, c, l);
            let mut res = vec![
                (*scale, real(&[c], sum_gx.clone())),
                (*shift, real(&[c], sum_g.clone())),
            ];
            if needs(x) {
                let n = (b * l) as f64;
                let mut gx = vec![0.0; grad.numel()];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * l;
                        let k = sv.data()[ci] * inv_std[ci];
                        for t in off..off + l {
                            gx[t] = match stats {
                                NormStats::Batch => k * (grad.data()[t] - sum_g[ci] / n - xhat[t] * sum_gx[ci] / n),
                                NormStats::Running { .. } => k * grad.data()[t],
                            };
                        }
                    }
                }
                res.push((*x, real(out.shape(), gx)));
            }
            res
        }
        Op::MaxPool1d { x, .. } | Op::AdaptivePool { x, kind: PoolKind::Max } => {
            let Aux::Argmax(arg) = &node.aux else {
                unreachable!("max pooling keeps its argmax")
            };
            let xv = val(nodes, *x);
            let mut gx = vec![0.0; xv.numel()];
            for (g, &i) in grad.data().iter().zip(arg) {
                gx[i] += g;
            }
            vec![(*x, real(xv.shape(), gx))]
        }
        Op::AdaptivePool { x, kind: PoolKind::Avg } => {
            let xv = val(nodes, *x);
            let l = xv.shape()[2];
            let mut gx = Vec::with_capacity(xv.numel());
            for g in grad.data() {
                gx.extend(std::iter::repeat_n(g / l as f64, l));
            }
            vec![(*x, real(xv.shape(), gx))]
        }
        Op::Concat(a, b) => {
            let (wa, wb) = (val(nodes, *a).shape()[1], val(nodes, *b).shape()[1]);
            let n = out.shape()[0];
            let mut ga = Vec::with_capacity(n * wa);
            let mut gb = Vec::with_capacity(n * wb);
            for r in grad.data().chunks_exact(wa + wb) {
                ga.extend_from_slice(&r[..wa]);
                gb.extend_from_slice(&r[wa..]);
            }
            vec![(*a, real(&[n, wa], ga)), (*b, real(&[n, wb], gb))]
        }
        Op::Linear { x, weight, bias } => {
            let (xv, wv) = (val(nodes, *x), val(nodes, *weight));
            let (n, n_in, n_out) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
            let mut gw = vec![0.0; n_out * n_in];
            let mut gb = vec![0.0; n_out];
            let mut gx = vec![0.0; n * n_in];
            for i in 0..n {
                let xr = &xv.data()[i * n_in..][..n_in];
                for o in 0..n_out {
                    let g = grad.data()[i * n_out + o];
                    gb[o] += g;
                    let wr = &wv.data()[o * n_in..][..n_in];
                    for ((dw, xval), (dx, wval)) in gw[o * n_in..][..n_in]
                        .iter_mut()
                        .zip(xr)
                        .zip(gx[i * n_in..][..n_in].iter_mut().zip(wr))
                    {
                        *dw += g * xval;
                        *dx += g * wval;
                    }
                }
            }
            vec![
                (*weight, real(wv.shape(), gw)),
                (*bias, real(&[n_out], gb)),
                (*x, real(xv.shape(), gx)),
            ]
        }
        Op::Softmax(x) => {
            let k = out.shape()[1];
            let mut gx = Vec::with_capacity(out.numel());
            for (p, g) in out.data().chunks_exact(k).zip(grad.data().chunks_exact(k)) {
                let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                gx.extend(p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)));
            }
            vec![(*x, real(out.shape(), gx))]
        }
        Op::CrossEntropy { logits, labels } => {
            let Aux::Probs(probs) = &node.aux else {
                unreachable!("cross entropy keeps its probabilities")
            };
            let z = val(nodes, *logits);
            let (n, k) = (z.shape()[0], z.shape()[1]);
            let scale = grad.item() / n as f64;
            let mut gz: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (i, y) in val(nodes, *labels).data().iter().enumerate() {
                gz[i * k + *y as usize] -= scale;
            }
            vec![(*logits, real(z.shape(), gz))]
        }
        Op::ToComplex(x) => vec![(*x, grad.re())],
        Op::ComplexFromParts(a, b) => vec![(*a, grad.re()), (*b, grad.im())],
        Op::RealPart(x) => vec![(*x, grad.to_complex())],
        Op::Dft(x) => {
            // Adjoint of the unnormalized transform is L times the normalized inverse.
            let l = out.shape().last().copied().unwrap_or(1) as f64;
            let g = transform_last_axis(grad, Direction::Inverse).expect("valid length");
            vec![(*x, restore_dtype(g.map(|v| v * l), val(nodes, *x).dtype()))]
        }
        Op::Idft(x) => {
            let l = out.shape().last().copied().unwrap_or(1) as f64;
            let g = transform_last_axis(grad, Direction::Forward).expect("valid length");
            vec![(*x, restore_dtype(g.map(|v| v / l), val(nodes, *x).dtype()))]
        }
        Op::SoftMask {
            phi,
            gamma,
            len,
            side,
            mode,
        } => {
            let (p, gm) = (val(nodes, *phi).item(), val(nodes, *gamma).item());
            let (mut gphi, mut ggamma) = (0.0, 0.0);
            for (j, g) in grad.data().iter().enumerate() {
                let (dphi, dgamma) = satse::soft_mask_partials(j, p, gm, *len, *side, *mode);
                gphi += g * dphi;
                ggamma += g * dgamma;
            }
            vec![
                (*phi, real(val(nodes, *phi).shape(), vec![gphi])),
                (*gamma, real(val(nodes, *gamma).shape(), vec![ggamma])),
            ]
        }
        Op::MaskMul { mask, x } => {
            let (m, xv) = (val(nodes, *mask), val(nodes, *x));
            let l = m.numel();
            let mut gm = vec![0.0; l];
            let mut gx = grad.clone();
            for (grow, xrow) in gx.data_mut().chunks_exact_mut(2 * l).zip(xv.data().chunks_exact(2 * l)) {
                for (j, (gp, xp)) in grow.chunks_exact_mut(2).zip(xrow.chunks_exact(2)).enumerate() {
                    gm[j] += gp[0] * xp[0] + gp[1] * xp[1];
                    gp[0] *= m.data()[j];
                    gp[1] *= m.data()[j];
                }
            }
            vec![(*mask, real(m.shape(), gm)), (*x, gx)]
        }
        Op::ComplexMul { weight, x } => {
            let (w, xv) = (val(nodes, *weight), val(nodes, *x));
            let per = w.data().len();
            let mut gw = vec![0.0; per];
            let mut gx = grad.clone();
            for (gblock, xblock) in gx.data_mut().chunks_exact_mut(per).zip(xv.data().chunks_exact(per)) {
                for ((gp, xp), (wp, dw)) in gblock
                    .chunks_exact_mut(2)
                    .zip(xblock.chunks_exact(2))
                    .zip(w.data().chunks_exact(2).zip(gw.chunks_exact_mut(2)))
                {
                    let (gr, gi) = (gp[0], gp[1]);
                    // conj(x) * g and conj(w) * g
                    dw[0] += xp[0] * gr + xp[1] * gi;
                    dw[1] += xp[0] * gi - xp[1] * gr;
                    gp[0] = wp[0] * gr + wp[1] * gi;
                    gp[1] = wp[0] * gi - wp[1] * gr;
                }
            }
            vec![(*weight, complex(w.shape(), gw)), (*x, gx)]
        }
    }
}

/// Gradients of real inputs to a transform keep only their real component.
fn restore_dtype(g: Tensor, dtype: DType) -> Tensor {
    match dtype {
        DType::Real64 => g.re(),
        DType::Complex128 => g,
    }
}

#[cfg(test)]
mod tests;
