//! One-dimensional convolution, batch normalization, pooling, linear and loss layers.

use rand::Rng;

use crate::autodiff::kernels::{self, ConvGeom};
use crate::autodiff::{softmax_row, Graph, NodeId, NormStats, PoolKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-bound..=bound)).collect()).expect("sized")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dLayer {
    /// `(C_out, C_in, k)`
    pub kernel: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dLayer {
    /// Kaiming-uniform kernel, `bound = sqrt(6 / (C_in * k))`.
    pub fn init(
        rng: &mut impl Rng,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let fan_in = (c_in * k) as f64;
        let kernel = uniform(rng, &[c_out, c_in, k], (6.0 / fan_in).sqrt());
        let bias = bias.then(|| uniform(rng, &[c_out], 1.0 / fan_in.sqrt()));
        Conv1dLayer {
            kernel,
            bias,
            stride,
            padding,
        }
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        kernels::window_out_len(len, self.kernel_size(), self.stride, self.padding)
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel.numel() + self.bias.as_ref().map_or(0, Tensor::numel)
    }

    pub fn attach(&self, graph: &mut Graph, prefix: &str, x: NodeId) -> NodeId {
        let w = graph.parameter(&format!("{prefix}.weight"), self.kernel.clone());
        let b = self
            .bias
            .as_ref()
            .map(|b| graph.parameter(&format!("{prefix}.bias"), b.clone()));
        graph.conv1d(x, w, b, self.stride, self.padding)
    }
}

/// Cross-correlation of a `(B, C_in, L)` batch with the layer kernel, plus bias.
pub fn conv1d_forward(x: &Tensor, layer: &Conv1dLayer) -> Result<Tensor> {
    if x.rank() != 3 || x.shape()[1] != layer.c_in() {
        return Err(Error::shape(
            "conv1d",
            format!("input {:?} does not have {} channels", x.shape(), layer.c_in()),
        ));
    }
    let len = x.shape()[2];
    let out_len = layer
        .out_len(len)
        .ok_or_else(|| Error::shape("conv1d", format!("length {len} yields an empty output")))?;
    let geom = ConvGeom {
        batch: x.shape()[0],
        c_in: layer.c_in(),
        len,
        c_out: layer.c_out(),
        kernel: layer.kernel_size(),
        stride: layer.stride,
        padding: layer.padding,
        out_len,
    };
    let out = kernels::conv1d_forward(
        x.data(),
        layer.kernel.data(),
        layer.bias.as_ref().map(Tensor::data),
        geom,
    );
    Tensor::from_vec(&[geom.batch, geom.c_out, out_len], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1dLayer {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm1dLayer {
    pub fn new(channels: usize) -> Self {
        BatchNorm1dLayer {
            scale: Tensor::full(&[channels], 1.0),
            shift: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.channels()
    }

    pub fn attach(&self, graph: &mut Graph, prefix: &str, x: NodeId, mode: Mode) -> NodeId {
        let scale = graph.parameter(&format!("{prefix}.scale"), self.scale.clone());
        let shift = graph.parameter(&format!("{prefix}.shift"), self.shift.clone());
        let stats = match mode {
            Mode::Train => NormStats::Batch,
            Mode::Eval => NormStats::Running {
                mean: self.running_mean.clone(),
                var: self.running_var.clone(),
            },
        };
        graph.batch_norm(x, scale, shift, self.eps, stats)
    }

    /// Folds batch statistics (mean, biased variance over `count` values) into the running estimates.
    pub fn update_running(&mut self, mean: &[f64], biased_var: &[f64], count: usize) {
        let m = self.momentum;
        let correction = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * biased_var[c] * correction;
        }
    }
}

/// Normalizes per channel over `(B, L)`. Train mode uses batch statistics and updates
/// the running estimates; eval mode uses the running estimates only.
pub fn batchnorm_forward(x: &Tensor, layer: &mut BatchNorm1dLayer, mode: Mode) -> Result<Tensor> {
    if x.rank() != 3 || x.shape()[1] != layer.channels() {
        return Err(Error::shape(
            "batch_norm",
            format!("input {:?} does not have {} channels", x.shape(), layer.channels()),
        ));
    }
    let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (mean, var) = match mode {
        Mode::Train => {
            if b < 2 {
                return Err(Error::invalid(
                    "batch normalization in train mode needs a batch of at least 2",
                ));
            }
            let (mean, var) = kernels::channel_stats(x.data(), b, c, l);
            layer.update_running(&mean, &var, b * l);
            (mean, var)
        }
        Mode::Eval => (layer.running_mean.clone(), layer.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + layer.eps).sqrt()).collect();
    let xhat = kernels::normalize(x.data(), &mean, &inv_std, b, c, l);
    Tensor::from_vec(
        x.shape(),
        kernels::affine(&xhat, layer.scale.data(), layer.shift.data(), b, c, l),
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Mean or maximum over the length axis: `(B, C, L)` to `(B, C)`.
pub fn adaptive_pool(x: &Tensor, kind: PoolKind) -> Result<Tensor> {
    if x.rank() != 3 || x.shape()[2] == 0 {
        return Err(Error::shape(
            "adaptive_pool",
            format!("expected (B, C, L >= 1), got {:?}", x.shape()),
        ));
    }
    let l = x.shape()[2];
    let rows = x.data().chunks_exact(l);
    let data = match kind {
        PoolKind::Avg => rows.map(|r| r.iter().sum::<f64>() / l as f64).collect(),
        PoolKind::Max => rows
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
    };
    Tensor::from_vec(&x.shape()[..2], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    /// `(n_out, n_in)`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    /// Uniform weights and bias with `bound = 1 / sqrt(n_in)`.
    pub fn init(rng: &mut impl Rng, n_in: usize, n_out: usize) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        LinearLayer {
            weight: uniform(rng, &[n_out, n_in], bound),
            bias: uniform(rng, &[n_out], bound),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    pub fn attach(&self, graph: &mut Graph, prefix: &str, x: NodeId) -> NodeId {
        let w = graph.parameter(&format!("{prefix}.weight"), self.weight.clone());
        let b = graph.parameter(&format!("{prefix}.bias"), self.bias.clone());
        graph.linear(x, w, b)
    }
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::shape(
            "softmax",
            format!("expected (B, K), got {:?}", logits.shape()),
        ));
    }
    let k = logits.shape()[1];
    let data = logits.data().chunks_exact(k).flat_map(softmax_row).collect();
    Tensor::from_vec(logits.shape(), data)
}

/// Mean over the batch of `-log softmax(logits)[label]`, with max subtraction.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {:?} vs {} labels", logits.shape(), labels.len()),
        ));
    }
    let k = logits.shape()[1];
    let mut total = 0.0;
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        if y >= k {
            return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}
