//! The full classifier: a 1-D ResNet backbone whose stage outputs each pass
//! through an optional SATSE block, followed by concatenated average/max
//! pooling and a linear head.

mod config;
mod gradcheck;
pub mod io;

use crate::autodiff::{Graph, NodeId, PoolKind};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm1dLayer, Conv1dLayer, LinearLayer, Mode};
use crate::satse::{build_satse, BranchRoles, SatseNodes, SatseParams};
use crate::seed::rng_for;
use crate::tensor::Tensor;

pub use config::{Backbone, ModelConfig, Precision};
pub use gradcheck::{check_model_gradients, perturb_satse, probe_batch};
pub use io::{load_model, save_model};

/// How a parameter is treated by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    LinearBias,
    NormAffine,
    SatseWeight,
    SatseScalar,
}

impl ParamKind {
    /// Coupled L2 applies to everything except normalization affines and SATSE scalars.
    pub fn decays(self) -> bool {
        !matches!(self, ParamKind::NormAffine | ParamKind::SatseScalar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// One residual unit: conv/norm pairs with ReLU between them, plus an optional projection shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct ResUnit {
    pub convs: Vec<Conv1dLayer>,
    pub norms: Vec<BatchNorm1dLayer>,
    pub projection: Option<(Conv1dLayer, BatchNorm1dLayer)>,
}

impl ResUnit {
    fn basic(rng: &mut impl rand::Rng, c_in: usize, c_out: usize, stride: usize) -> Self {
        ResUnit {
            convs: vec![
                Conv1dLayer::init(rng, c_in, c_out, 3, stride, 1, false),
                Conv1dLayer::init(rng, c_out, c_out, 3, 1, 1, false),
            ],
            norms: vec![BatchNorm1dLayer::new(c_out), BatchNorm1dLayer::new(c_out)],
            projection: (stride != 1 || c_in != c_out).then(|| {
                (
                    Conv1dLayer::init(rng, c_in, c_out, 1, stride, 0, false),
                    BatchNorm1dLayer::new(c_out),
                )
            }),
        }
    }

    fn bottleneck(rng: &mut impl rand::Rng, c_in: usize, width: usize, expansion: usize, stride: usize) -> Self {
        let c_out = width * expansion;
        ResUnit {
            convs: vec![
                Conv1dLayer::init(rng, c_in, width, 1, 1, 0, false),
                Conv1dLayer::init(rng, width, width, 3, stride, 1, false),
                Conv1dLayer::init(rng, width, c_out, 1, 1, 0, false),
            ],
            norms: vec![
                BatchNorm1dLayer::new(width),
                BatchNorm1dLayer::new(width),
                BatchNorm1dLayer::new(c_out),
            ],
            projection: (stride != 1 || c_in != c_out).then(|| {
                (
                    Conv1dLayer::init(rng, c_in, c_out, 1, stride, 0, false),
                    BatchNorm1dLayer::new(c_out),
                )
            }),
        }
    }

    fn out_len(&self, len: usize) -> Option<usize> {
        self.convs.iter().try_fold(len, |l, c| c.out_len(l))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub units: Vec<ResUnit>,
    pub satse: Option<SatseParams>,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScdnnModel {
    pub config: ModelConfig,
    pub stem_conv: Conv1dLayer,
    pub stem_norm: BatchNorm1dLayer,
    pub stages: Vec<Stage>,
    pub head: LinearLayer,
}

/// Graph of one forward pass plus the handles needed after evaluating it.
pub struct ModelGraph {
    pub graph: Graph,
    pub logits: NodeId,
    pub loss: Option<NodeId>,
    /// Batch-norm nodes in [`ScdnnModel::norms_mut`] order.
    pub norm_nodes: Vec<NodeId>,
    pub stage_outputs: Vec<NodeId>,
}

const STEM_KERNEL: usize = 7;
const STEM_STRIDE: usize = 2;
const STEM_PADDING: usize = 3;
const POOL_KERNEL: usize = 3;
const POOL_STRIDE: usize = 2;
const POOL_PADDING: usize = 1;

fn pool_out_len(len: usize) -> Option<usize> {
    crate::autodiff::kernels::window_out_len(len, POOL_KERNEL, POOL_STRIDE, POOL_PADDING)
}

/// Deterministically constructs a model; SATSE blocks start at `phi_init`, `gamma_init`, `W = 1`, zero lambdas.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ScdnnModel> {
    config.validate()?;
    let mut rng = rng_for(seed, "init");
    let stem_width = config.widths[0];
    let stem_conv = Conv1dLayer::init(
        &mut rng,
        config.n_leads,
        stem_width,
        STEM_KERNEL,
        STEM_STRIDE,
        STEM_PADDING,
        false,
    );
    let mut len = stem_conv
        .out_len(config.input_length)
        .ok_or_else(|| Error::invalid(format!("input length {} is too short", config.input_length)))?;
    if config.stem_maxpool {
        len = pool_out_len(len).ok_or_else(|| Error::invalid("input too short for the stem pool"))?;
    }
    let expansion = config.backbone.expansion();
    let units = config.backbone.units_per_stage();
    let mut c_in = stem_width;
    let mut stages = Vec::with_capacity(config.stages());
    for (i, &width) in config.widths.iter().enumerate() {
        let mut stage_units = Vec::with_capacity(units[i]);
        for u in 0..units[i] {
            let stride = if i > 0 && u == 0 { 2 } else { 1 };
            let unit = match config.backbone {
                Backbone::Resnet50 => ResUnit::bottleneck(&mut rng, c_in, width, expansion, stride),
                _ => ResUnit::basic(&mut rng, c_in, width, stride),
            };
            len = unit.out_len(len).ok_or_else(|| {
                Error::invalid(format!(
                    "input length {} collapses at stage {}",
                    config.input_length,
                    i + 1
                ))
            })?;
            c_in = width * expansion;
            stage_units.push(unit);
        }
        let satse = config.satse_blocks_enabled[i].then(|| {
            let phi = config.fixed_phi.unwrap_or(config.phi_init);
            SatseParams::with_init(c_in, len, config.mask_index_mode, phi, config.gamma_init)
        });
        stages.push(Stage {
            units: stage_units,
            satse,
            out_channels: c_in,
        });
    }
    let head = LinearLayer::init(&mut rng, 2 * c_in, config.n_classes);
    Ok(ScdnnModel {
        config: config.clone(),
        stem_conv,
        stem_norm: BatchNorm1dLayer::new(stem_width),
        stages,
        head,
    })
}

impl ScdnnModel {
    /// Sequence length after the stem and after each stage, for a given input length.
    pub fn stage_lengths(&self, input_len: usize) -> Result<Vec<usize>> {
        let short = || Error::invalid(format!("input length {input_len} is too short for this model"));
        let mut len = self.stem_conv.out_len(input_len).ok_or_else(short)?;
        if self.config.stem_maxpool {
            len = pool_out_len(len).ok_or_else(short)?;
        }
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for unit in &stage.units {
                len = unit.out_len(len).ok_or_else(short)?;
            }
            out.push(len);
        }
        Ok(out)
    }

    pub fn head_width(&self) -> usize {
        self.head.n_in()
    }

    pub fn satse_blocks(&self) -> impl Iterator<Item = Option<&SatseParams>> {
        self.stages.iter().map(|s| s.satse.as_ref())
    }

    pub fn satse_blocks_mut(&mut self) -> impl Iterator<Item = &mut SatseParams> {
        self.stages.iter_mut().filter_map(|s| s.satse.as_mut())
    }

    /// Every batch-norm layer in a fixed order.
    pub fn norms_mut(&mut self) -> Vec<&mut BatchNorm1dLayer> {
        let mut out = vec![&mut self.stem_norm];
        for stage in &mut self.stages {
            for unit in &mut stage.units {
                out.extend(unit.norms.iter_mut());
                if let Some((_, n)) = unit.projection.as_mut() {
                    out.push(n);
                }
            }
        }
        out
    }

    /// Total real-valued parameter count (SATSE weights count both parts).
    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.data.len()).sum()
    }

    /// Snapshot of every parameter with its stable name.
    pub fn parameters(&self) -> Vec<ParamEntry> {
        let mut out = Vec::new();
        let mut push = |name: String, kind: ParamKind, trainable: bool, t: &Tensor| {
            out.push(ParamEntry {
                name,
                kind,
                trainable,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            });
        };
        push_conv(&mut push, "stem.conv", &self.stem_conv);
        push_norm(&mut push, "stem.bn", &self.stem_norm);
        for (i, stage) in self.stages.iter().enumerate() {
            for (u, unit) in stage.units.iter().enumerate() {
                let prefix = format!("stage{}.unit{}", i + 1, u);
                for (k, (c, n)) in unit.convs.iter().zip(&unit.norms).enumerate() {
                    push_conv(&mut push, &format!("{prefix}.conv{k}"), c);
                    push_norm(&mut push, &format!("{prefix}.bn{k}"), n);
                }
                if let Some((c, n)) = &unit.projection {
                    push_conv(&mut push, &format!("{prefix}.proj.conv"), c);
                    push_norm(&mut push, &format!("{prefix}.proj.bn"), n);
                }
            }
            if let Some(p) = &stage.satse {
                let s = format!("satse{}", i + 1);
                let phi_trainable = self.config.fixed_phi.is_none();
                push(
                    format!("{s}.phi"),
                    ParamKind::SatseScalar,
                    phi_trainable,
                    &Tensor::scalar(p.phi),
                );
                push(
                    format!("{s}.gamma"),
                    ParamKind::SatseScalar,
                    true,
                    &Tensor::scalar(p.gamma),
                );
                push(format!("{s}.weight_re"), ParamKind::SatseWeight, true, &p.weight_re);
                push(format!("{s}.weight_im"), ParamKind::SatseWeight, true, &p.weight_im);
                push(
                    format!("{s}.lambda_low"),
                    ParamKind::SatseScalar,
                    true,
                    &Tensor::scalar(p.lambda_low),
                );
                push(
                    format!("{s}.lambda_high"),
                    ParamKind::SatseScalar,
                    true,
                    &Tensor::scalar(p.lambda_high),
                );
            }
        }
        push(
            "head.fc.weight".to_string(),
            ParamKind::LinearWeight,
            true,
            &self.head.weight,
        );
        push("head.fc.bias".to_string(), ParamKind::LinearBias, true, &self.head.bias);
        out
    }

    /// Calls `f(name, data)` for every parameter, in [`ScdnnModel::parameters`] order.
    pub fn visit_parameters_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        visit_conv(&mut f, "stem.conv", &mut self.stem_conv);
        visit_norm(&mut f, "stem.bn", &mut self.stem_norm);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (u, unit) in stage.units.iter_mut().enumerate() {
                let prefix = format!("stage{}.unit{}", i + 1, u);
                for (k, (c, n)) in unit.convs.iter_mut().zip(unit.norms.iter_mut()).enumerate() {
                    visit_conv(&mut f, &format!("{prefix}.conv{k}"), c);
                    visit_norm(&mut f, &format!("{prefix}.bn{k}"), n);
                }
                if let Some((c, n)) = unit.projection.as_mut() {
                    visit_conv(&mut f, &format!("{prefix}.proj.conv"), c);
                    visit_norm(&mut f, &format!("{prefix}.proj.bn"), n);
                }
            }
            if let Some(p) = stage.satse.as_mut() {
                let s = format!("satse{}", i + 1);
                f(&format!("{s}.phi"), std::slice::from_mut(&mut p.phi));
                f(&format!("{s}.gamma"), std::slice::from_mut(&mut p.gamma));
                f(&format!("{s}.weight_re"), p.weight_re.data_mut());
                f(&format!("{s}.weight_im"), p.weight_im.data_mut());
                f(&format!("{s}.lambda_low"), std::slice::from_mut(&mut p.lambda_low));
                f(&format!("{s}.lambda_high"), std::slice::from_mut(&mut p.lambda_high));
            }
        }
        f("head.fc.weight", self.head.weight.data_mut());
        f("head.fc.bias", self.head.bias.data_mut());
    }

    pub fn norms(&self) -> Vec<&BatchNorm1dLayer> {
        let mut out = vec![&self.stem_norm];
        for stage in &self.stages {
            for unit in &stage.units {
                out.extend(unit.norms.iter());
                if let Some((_, n)) = unit.projection.as_ref() {
                    out.push(n);
                }
            }
        }
        out
    }

    /// Running statistics as `(name, values)` pairs.
    pub fn buffers(&self) -> Vec<(String, Vec<f64>)> {
        let names = self.norm_names();
        let mut out = Vec::new();
        for (name, n) in names.iter().zip(self.norms()) {
            out.push((format!("{name}.running_mean"), n.running_mean.clone()));
            out.push((format!("{name}.running_var"), n.running_var.clone()));
        }
        out
    }

    pub(crate) fn norm_names(&self) -> Vec<String> {
        let mut out = vec!["stem.bn".to_string()];
        for (i, stage) in self.stages.iter().enumerate() {
            for (u, unit) in stage.units.iter().enumerate() {
                for k in 0..unit.norms.len() {
                    out.push(format!("stage{}.unit{}.bn{}", i + 1, u, k));
                }
                if unit.projection.is_some() {
                    out.push(format!("stage{}.unit{}.proj.bn", i + 1, u));
                }
            }
        }
        out
    }

    /// Records one forward pass over a `(batch, n_leads, len)` input named `x`.
    /// With `with_loss`, a `(batch)` input named `labels` feeds a cross-entropy node.
    pub fn build_graph(&self, batch: usize, len: usize, mode: Mode, with_loss: bool) -> Result<ModelGraph> {
        let stage_lens = self.stage_lengths(len)?;
        let mut g = Graph::new();
        let mut norm_nodes = Vec::new();
        let mut stage_outputs = Vec::new();
        g.set_scope("stem");
        let x = g.input("x", &[batch, self.config.n_leads, len]);
        let mut h = self.stem_conv.attach(&mut g, "stem.conv", x);
        h = self.stem_norm.attach(&mut g, "stem.bn", h, mode);
        norm_nodes.push(h);
        h = g.relu(h);
        if self.config.stem_maxpool {
            h = g.max_pool1d(h, POOL_KERNEL, POOL_STRIDE, POOL_PADDING);
        }
        for (i, stage) in self.stages.iter().enumerate() {
            for (u, unit) in stage.units.iter().enumerate() {
                let prefix = format!("stage{}.unit{}", i + 1, u);
                g.set_scope(prefix.clone());
                let input = h;
                let last = unit.convs.len() - 1;
                for (k, (conv, norm)) in unit.convs.iter().zip(&unit.norms).enumerate() {
                    h = conv.attach(&mut g, &format!("{prefix}.conv{k}"), h);
                    h = norm.attach(&mut g, &format!("{prefix}.bn{k}"), h, mode);
                    norm_nodes.push(h);
                    if k < last {
                        h = g.relu(h);
                    }
                }
                let shortcut = match &unit.projection {
                    Some((conv, norm)) => {
                        let s = conv.attach(&mut g, &format!("{prefix}.proj.conv"), input);
                        let s = norm.attach(&mut g, &format!("{prefix}.proj.bn"), s, mode);
                        norm_nodes.push(s);
                        s
                    }
                    None => input,
                };
                h = g.add(h, shortcut);
                h = g.relu(h);
            }
            if let Some(p) = &stage.satse {
                let s = format!("satse{}", i + 1);
                g.set_scope(s.clone());
                let phi = match self.config.fixed_phi {
                    Some(_) => g.constant(Tensor::scalar(p.phi)),
                    None => g.parameter(&format!("{s}.phi"), Tensor::scalar(p.phi)),
                };
                let nodes = SatseNodes {
                    phi,
                    gamma: g.parameter(&format!("{s}.gamma"), Tensor::scalar(p.gamma)),
                    weight_re: g.parameter(&format!("{s}.weight_re"), p.weight_re.clone()),
                    weight_im: g.parameter(&format!("{s}.weight_im"), p.weight_im.clone()),
                    lambda_low: g.parameter(&format!("{s}.lambda_low"), Tensor::scalar(p.lambda_low)),
                    lambda_high: g.parameter(&format!("{s}.lambda_high"), Tensor::scalar(p.lambda_high)),
                };
                h = build_satse(
                    &mut g,
                    h,
                    &nodes,
                    stage_lens[i],
                    p.mask_index_mode,
                    BranchRoles::Standard,
                )
                .output;
            }
            stage_outputs.push(h);
        }
        g.set_scope("head");
        let avg = g.adaptive_pool(h, PoolKind::Avg);
        let max = g.adaptive_pool(h, PoolKind::Max);
        let features = g.concat(avg, max);
        let logits = self.head.attach(&mut g, "head.fc", features);
        let loss = with_loss.then(|| {
            let labels = g.input("labels", &[batch]);
            let scores = if self.config.double_softmax {
                g.softmax(logits)
            } else {
                logits
            };
            g.cross_entropy(scores, labels)
        });
        g.set_output(loss.unwrap_or(logits));
        Ok(ModelGraph {
            graph: g,
            logits,
            loss,
            norm_nodes,
            stage_outputs,
        })
    }

    /// Folds the batch statistics of a train-mode pass into the running estimates.
    pub fn absorb_batch_statistics(&mut self, mg: &ModelGraph) {
        for (norm, id) in self.norms_mut().into_iter().zip(&mg.norm_nodes) {
            if let Some(stats) = mg.graph.batch_statistics(*id) {
                norm.update_running(&stats.mean, &stats.var, stats.count);
            }
        }
    }

    /// Fails with the name of the first stage whose output is not finite.
    pub fn check_finite(&self, mg: &ModelGraph) -> Result<()> {
        for (i, id) in mg.stage_outputs.iter().enumerate() {
            if !mg.graph.value(*id).is_some_and(Tensor::is_finite) {
                return Err(Error::NonFinite(format!("stage {} output", i + 1)));
            }
        }
        if !mg.graph.value(mg.logits).is_some_and(Tensor::is_finite) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(())
    }
}

fn push_conv(push: &mut impl FnMut(String, ParamKind, bool, &Tensor), prefix: &str, c: &Conv1dLayer) {
    push(format!("{prefix}.weight"), ParamKind::ConvWeight, true, &c.kernel);
    if let Some(b) = &c.bias {
        push(format!("{prefix}.bias"), ParamKind::ConvWeight, true, b);
    }
}

fn push_norm(push: &mut impl FnMut(String, ParamKind, bool, &Tensor), prefix: &str, n: &BatchNorm1dLayer) {
    push(format!("{prefix}.scale"), ParamKind::NormAffine, true, &n.scale);
    push(format!("{prefix}.shift"), ParamKind::NormAffine, true, &n.shift);
}

fn visit_conv(f: &mut impl FnMut(&str, &mut [f64]), prefix: &str, c: &mut Conv1dLayer) {
    f(&format!("{prefix}.weight"), c.kernel.data_mut());
    if let Some(b) = c.bias.as_mut() {
        f(&format!("{prefix}.bias"), b.data_mut());
    }
}

fn visit_norm(f: &mut impl FnMut(&str, &mut [f64]), prefix: &str, n: &mut BatchNorm1dLayer) {
    f(&format!("{prefix}.scale"), n.scale.data_mut());
    f(&format!("{prefix}.shift"), n.shift.data_mut());
}

impl ScdnnModel {
    /// Eval-mode logits; a pure function of the model and the batch.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        check_input(self, batch)?;
        let mut mg = self.build_graph(batch.shape()[0], batch.shape()[2], Mode::Eval, false)?;
        let logits = mg.graph.forward_eval(&[("x", batch.clone())])?;
        self.check_finite(&mg)?;
        Ok(logits)
    }
}

fn check_input(model: &ScdnnModel, batch: &Tensor) -> Result<()> {
    if batch.rank() != 3 || batch.shape()[1] != model.config.n_leads || batch.is_complex() {
        return Err(Error::shape(
            "model input",
            format!(
                "expected real (B, {}, L), got {:?}",
                model.config.n_leads,
                batch.shape()
            ),
        ));
    }
    Ok(())
}

/// Logits `(B, n_classes)` for a `(B, n_leads, L)` batch. Train mode uses batch
/// statistics and updates the running estimates.
pub fn model_forward(model: &mut ScdnnModel, batch: &Tensor, mode: Mode) -> Result<Tensor> {
    check_input(model, batch)?;
    let mut mg = model.build_graph(batch.shape()[0], batch.shape()[2], mode, false)?;
    let logits = mg.graph.forward_eval(&[("x", batch.clone())])?;
    model.check_finite(&mg)?;
    if mode == Mode::Train {
        model.absorb_batch_statistics(&mg);
    }
    Ok(logits)
}

#[cfg(test)]
mod tests;
