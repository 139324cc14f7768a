//! Mini-batch training with Adam, a step learning-rate schedule and per-epoch
//! SATSE parameter traces.

mod adam;

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::data::{EcgDataset, Split};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::ScdnnModel;
use crate::seed::rng_for;
use crate::tensor::Tensor;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState, Moments};

/// Number of SATSE column groups in a trace (one per backbone stage).
pub const TRACE_BLOCKS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            epochs: 50,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 2e-5,
            lr_drop_epoch: 20,
            lr_drop_factor: 10.0,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.lr_drop_factor, self.adam.eps]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.epochs == 0 || self.batch_size == 0 || self.lr_drop_epoch == 0 {
            return Err(Error::invalid(format!(
                "hyperparameters must be positive: {}",
                self.echo()
            )));
        }
        if self.weight_decay.is_nan()
            || self.weight_decay < 0.0
            || !(0.0..1.0).contains(&self.adam.beta1)
            || !(0.0..1.0).contains(&self.adam.beta2)
        {
            return Err(Error::invalid("weight decay must be >= 0 and Adam betas in [0, 1)"));
        }
        if self.lr_drop_epoch > self.epochs {
            return Err(Error::invalid(format!(
                "lr_drop_epoch {} exceeds epochs {}; set it to at most the epoch count",
                self.lr_drop_epoch, self.epochs
            )));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_drop_epoch {
            self.lr / self.lr_drop_factor
        } else {
            self.lr
        }
    }

    /// One-line summary, e.g. `epochs=50 batch=32 lr=1e-4 wd=2e-5 ...`.
    pub fn echo(&self) -> String {
        format!(
            "epochs={} batch={} lr={:e} wd={:e} lr_drop_epoch={} lr_drop_factor={} seed={} beta1={} beta2={} adam_eps={:e}",
            self.epochs,
            self.batch_size,
            self.lr,
            self.weight_decay,
            self.lr_drop_epoch,
            self.lr_drop_factor,
            self.seed,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps
        )
    }

    /// Sets a field from its key in [`Hyperparams::to_text`]. Returns `Ok(false)` for unknown keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad value for {key}: {value}")))
        }
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "lr_drop_epoch" => self.lr_drop_epoch = parse(key, value)?,
            "lr_drop_factor" => self.lr_drop_factor = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "adam_beta1" => self.adam.beta1 = parse(key, value)?,
            "adam_beta2" => self.adam.beta2 = parse(key, value)?,
            "adam_eps" => self.adam.eps = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        format!(
            "epochs={}\nbatch_size={}\nlr={:e}\nweight_decay={:e}\nlr_drop_epoch={}\nlr_drop_factor={}\nseed={}\nadam_beta1={}\nadam_beta2={}\nadam_eps={:e}\n",
            self.epochs,
            self.batch_size,
            self.lr,
            self.weight_decay,
            self.lr_drop_epoch,
            self.lr_drop_factor,
            self.seed,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps
        )
    }
}

/// SATSE values of one block at a trace point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockTrace {
    pub phi: f64,
    pub gamma: f64,
    pub lambda_low: f64,
    pub lambda_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub lr: f64,
    /// SATSE values at the start of the epoch; `None` for disabled or absent blocks.
    pub blocks: [Option<BlockTrace>; TRACE_BLOCKS],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceLog {
    pub rows: Vec<TraceRow>,
}

impl TraceLog {
    pub fn header() -> String {
        let mut cols = vec!["epoch".to_string(), "loss".into(), "lr".into()];
        for prefix in ["phi", "gamma", "lamL", "lamH"] {
            cols.extend((1..=TRACE_BLOCKS).map(|i| format!("{prefix}{i}")));
        }
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::header();
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{},{}", row.epoch, row.loss, row.lr);
            let fields: [fn(&BlockTrace) -> f64; 4] = [|b| b.phi, |b| b.gamma, |b| b.lambda_low, |b| b.lambda_high];
            for field in fields {
                for block in &row.blocks {
                    match block {
                        Some(b) => {
                            let _ = write!(out, ",{}", field(b));
                        }
                        None => out.push(','),
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn snapshot(model: &ScdnnModel) -> [Option<BlockTrace>; TRACE_BLOCKS] {
    let mut out = [None; TRACE_BLOCKS];
    for (slot, block) in out.iter_mut().zip(model.satse_blocks()) {
        *slot = block.map(|p| BlockTrace {
            phi: p.phi,
            gamma: p.gamma,
            lambda_low: p.lambda_low,
            lambda_high: p.lambda_high,
        });
    }
    out
}

/// Checks that `dataset` can feed `model` and returns the train indices.
fn train_indices(model: &ScdnnModel, dataset: &EcgDataset) -> Result<Vec<usize>> {
    let cfg = &model.config;
    if dataset.n_classes() != cfg.n_classes {
        return Err(Error::invalid(format!(
            "model has {} classes, dataset vocabulary has {}",
            cfg.n_classes,
            dataset.n_classes()
        )));
    }
    if dataset.n_leads != cfg.n_leads {
        return Err(Error::invalid(format!(
            "model expects {} leads, dataset has {}",
            cfg.n_leads, dataset.n_leads
        )));
    }
    let indices = dataset.indices(Split::Train);
    if indices.is_empty() {
        return Err(Error::invalid("dataset has no train records"));
    }
    if let Some(r) = indices
        .iter()
        .map(|&i| &dataset.records[i])
        .find(|r| r.length != cfg.input_length)
    {
        return Err(Error::invalid(format!(
            "record {} has length {} but the model input length is {}; pad or crop the dataset",
            r.record_id, r.length, cfg.input_length
        )));
    }
    Ok(indices)
}

/// One optimizer step on a batch; returns the batch loss.
fn train_batch(
    model: &mut ScdnnModel,
    x: Tensor,
    labels: &[usize],
    state: &mut AdamState,
    lr: f64,
    hyper: &Hyperparams,
) -> std::result::Result<f64, String> {
    let (b, len) = (x.shape()[0], x.shape()[2]);
    let mut mg = model
        .build_graph(b, len, Mode::Train, true)
        .map_err(|e| e.to_string())?;
    let label_tensor = Tensor::from_vec(&[b], labels.iter().map(|&l| l as f64).collect()).map_err(|e| e.to_string())?;
    let loss = mg
        .graph
        .forward_eval(&[("x", x), ("labels", label_tensor)])
        .map_err(|e| e.to_string())?
        .item();
    if !loss.is_finite() {
        return Err(format!("loss is {loss}"));
    }
    let grads = mg
        .graph
        .backward(mg.loss.expect("graph built with loss"))
        .map_err(|e| e.to_string())?;
    if !grads.is_finite() {
        return Err(format!("non-finite gradient for {}", grads.non_finite.join(", ")));
    }
    adam_step(model, &grads, state, lr, hyper.weight_decay, &hyper.adam);
    for p in model.satse_blocks_mut() {
        p.clamp();
    }
    model.absorb_batch_statistics(&mg);
    Ok(loss)
}

/// Trains `model` in place on the train split and returns one trace row per epoch.
///
/// Row `e` holds the SATSE values at the start of epoch `e`, the learning rate
/// used during it and its mean batch loss. Results are bit-reproducible for a
/// fixed seed.
pub fn train(model: &mut ScdnnModel, dataset: &EcgDataset, hyper: &Hyperparams) -> Result<TraceLog> {
    hyper.validate()?;
    let mut order = train_indices(model, dataset)?;
    let mut rng = rng_for(hyper.seed, "shuffle");
    let mut state = AdamState::new(model);
    let mut trace = TraceLog::default();
    for epoch in 0..hyper.epochs {
        let blocks = snapshot(model);
        let lr = hyper.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (batch, chunk) in order.chunks(hyper.batch_size).enumerate() {
            if chunk.len() < 2 && order.len() > 1 {
                log::debug!("epoch {epoch}: skipping trailing batch of one record");
                continue;
            }
            let (x, labels) = dataset.batch(chunk)?;
            let loss = train_batch(model, x, &labels, &mut state, lr, hyper)
                .map_err(|detail| Error::TrainingAborted { epoch, batch, detail })?;
            total += loss;
            batches += 1;
        }
        let loss = total / batches as f64;
        log::info!("epoch {epoch}: loss {loss:.6} lr {lr:e}");
        trace.rows.push(TraceRow {
            epoch,
            loss,
            lr,
            blocks,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests;
