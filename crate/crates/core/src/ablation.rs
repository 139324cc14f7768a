//! Ablation sweeps over SATSE count, fixed threshold and backbone depth, plus
//! inference timing.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use crate::data::{EcgDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{build_model, Backbone, ModelConfig, ScdnnModel};
use crate::seed::derive_seed;
use crate::train::{train, Hyperparams, TraceLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    SatseCount,
    FixedPhi,
    Depth,
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::SatseCount => "satse-count",
            AblationAxis::FixedPhi => "fixed-phi",
            AblationAxis::Depth => "depth",
        }
    }

    /// Returns `base` with this axis set to `value`.
    pub fn configure(self, base: &ModelConfig, value: &str) -> Result<ModelConfig> {
        let mut cfg = base.clone();
        match self {
            AblationAxis::SatseCount => {
                let n: usize = value
                    .parse()
                    .map_err(|_| Error::invalid(format!("satse count must be an integer, got {value}")))?;
                if n > cfg.stages() {
                    return Err(Error::invalid(format!(
                        "satse count {n} exceeds {} stages",
                        cfg.stages()
                    )));
                }
                cfg = cfg.with_satse_count(n);
            }
            AblationAxis::FixedPhi => {
                let phi: f64 = value
                    .parse()
                    .map_err(|_| Error::invalid(format!("fixed phi must be a number, got {value}")))?;
                cfg.fixed_phi = Some(phi);
            }
            AblationAxis::Depth => cfg.backbone = Backbone::from_str(value)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "satse-count" | "satse_count" => Ok(AblationAxis::SatseCount),
            "fixed-phi" | "fixed_phi" => Ok(AblationAxis::FixedPhi),
            "depth" => Ok(AblationAxis::Depth),
            other => Err(Error::invalid(format!("unknown ablation axis {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub trace: TraceLog,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub value: String,
    pub parameter_count: usize,
    pub runs: Vec<AblationRun>,
}

impl AblationRow {
    fn stat(&self, f: fn(&MetricsReport) -> f64) -> MeanStd {
        MeanStd::of(&self.runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
    }

    pub fn accuracy(&self) -> MeanStd {
        self.stat(|m| m.accuracy)
    }

    pub fn precision(&self) -> MeanStd {
        self.stat(|m| m.macro_precision)
    }

    pub fn recall(&self) -> MeanStd {
        self.stat(|m| m.macro_recall)
    }

    pub fn f1(&self) -> MeanStd {
        self.stat(|m| m.macro_f1)
    }
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Text table with one `mean±std` cell per macro metric.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>17} {:>17} {:>17} {:>17}",
            self.axis.as_str(),
            "params",
            "accuracy",
            "precision",
            "recall",
            "f1"
        );
        for row in &self.rows {
            let cell = |m: MeanStd| format!("{:.3}±{:.3}", m.mean, m.std);
            let _ = writeln!(
                out,
                "{:<12} {:>10} {:>17} {:>17} {:>17} {:>17}",
                row.value,
                row.parameter_count,
                cell(row.accuracy()),
                cell(row.precision()),
                cell(row.recall()),
                cell(row.f1())
            );
        }
        out
    }
}

/// Seed of repeat `r`: the shared seed for the first repeat, derived sub-seeds after.
pub fn repeat_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive_seed(seed, &format!("repeat{r}"))
    }
}

/// Trains and evaluates one model per axis value and repeat.
///
/// Each run builds its model from the repeat seed and evaluates on the test
/// split, or on val when test is empty.
pub fn run_ablation(
    base: &ModelConfig,
    axis: AblationAxis,
    values: &[String],
    dataset: &EcgDataset,
    hyper: &Hyperparams,
    repeats: usize,
) -> Result<AblationTable> {
    if values.is_empty() || repeats == 0 {
        return Err(Error::invalid("ablation needs at least one value and one repeat"));
    }
    let configs = values
        .iter()
        .map(|v| axis.configure(base, v))
        .collect::<Result<Vec<_>>>()?;
    let split = if dataset.indices(Split::Test).is_empty() {
        Split::Val
    } else {
        Split::Test
    };
    let mut rows = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(&configs) {
        let mut runs = Vec::with_capacity(repeats);
        let mut parameter_count = 0;
        for r in 0..repeats {
            let seed = repeat_seed(hyper.seed, r);
            let mut model = build_model(cfg, seed)?;
            parameter_count = model.parameter_count();
            let run_hyper = Hyperparams { seed, ..hyper.clone() };
            let trace = train(&mut model, dataset, &run_hyper)?;
            let metrics = evaluate(&model, dataset, split)?;
            log::info!(
                "{} = {value}, repeat {r}: macro f1 {:.4}",
                axis.as_str(),
                metrics.macro_f1
            );
            runs.push(AblationRun { seed, metrics, trace });
        }
        rows.push(AblationRow {
            value: value.clone(),
            parameter_count,
            runs,
        });
    }
    Ok(AblationTable { axis, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTiming {
    pub batch_size: usize,
    /// Seconds per batch, one entry per repeat.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Times eval-mode forward passes over the first `batch_size` records, after `warmup` untimed passes.
pub fn benchmark_inference(
    model: &ScdnnModel,
    dataset: &EcgDataset,
    batch_size: usize,
    warmup: usize,
    repeats: usize,
) -> Result<InferenceTiming> {
    if repeats == 0 || batch_size == 0 || dataset.is_empty() {
        return Err(Error::invalid(
            "benchmark needs records, a positive batch size and at least one repeat",
        ));
    }
    let indices: Vec<usize> = (0..batch_size.min(dataset.len())).collect();
    let (x, _) = dataset.batch(&indices)?;
    for _ in 0..warmup {
        model.predict(&x)?;
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        model.predict(&x)?;
        samples.push(start.elapsed().as_secs_f64());
    }
    let stats = MeanStd::of(&samples);
    Ok(InferenceTiming {
        batch_size: indices.len(),
        samples,
        mean: stats.mean,
        std: stats.std,
    })
}
