//! Command surface shared by the `scdnn` binary and the integration tests.
//!
//! Settings are layered: built-in defaults, then values derived from the
//! dataset (class count, leads, length), then a `key=value` config file, then
//! flags. The effective settings are written into each run manifest.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::ablation::{run_ablation, AblationAxis};
use crate::binio::write_atomic;
use crate::data::{pad_to_max, read_ecgb, stratified_split, synth_generate, write_ecgb, EcgDataset, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{build_model, check_model_gradients, load_model, perturb_satse, save_model, Backbone, ModelConfig};
use crate::satse::MaskIndexMode;
use crate::train::{train, Hyperparams};

/// Gradient checks refuse models above this many parameters.
pub const GRADCHECK_MAX_PARAMS: usize = 50_000;
pub const GRADCHECK_MAX_LENGTH: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "scdnn", version, about = "Spectral cross-domain ECG classifier")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic ECG dataset with a stratified split.
    Synth(SynthArgs),
    /// Train a model and write model, trace, metrics and manifest.
    Train(TrainArgs),
    /// Evaluate a saved model on one split.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck(GradcheckArgs),
    /// Train one model per value of an ablation axis.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Records per class.
    #[arg(long = "n", default_value_t = 100)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u16).range(2..))]
    pub classes: u16,
    #[arg(long, default_value_t = 12)]
    pub leads: usize,
    /// Samples per lead (500 Hz).
    #[arg(long, default_value_t = 5000)]
    pub length: usize,
    /// White-noise standard deviation in millivolts.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train,val,test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// `key=value` file with model and training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub backbone: Option<Backbone>,
    /// Comma-separated stage widths.
    #[arg(long)]
    pub widths: Option<String>,
    #[arg(long)]
    pub input_length: Option<usize>,
    /// Number of SATSE blocks, attached to the earliest stages first.
    #[arg(long)]
    pub satse_blocks: Option<usize>,
    /// Freeze every threshold ratio at this value.
    #[arg(long)]
    pub fixed_phi: Option<f64>,
    #[arg(long)]
    pub phi_init: Option<f64>,
    #[arg(long)]
    pub gamma_init: Option<f64>,
    /// `symmetric` or `literal`.
    #[arg(long)]
    pub mask_mode: Option<MaskIndexMode>,
    /// Apply softmax before the cross-entropy.
    #[arg(long)]
    pub double_softmax: bool,
    /// Drop the stem max-pool.
    #[arg(long)]
    pub no_stem_maxpool: bool,
}

#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub lr_drop_epoch: Option<usize>,
    #[arg(long)]
    pub lr_drop_factor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// `key=value` model settings applied over the tiny default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Restrict to parameters with this name or final name segment (repeatable).
    #[arg(long)]
    pub param: Vec<String>,
    /// Rows of the report to print.
    #[arg(long, default_value_t = 10)]
    pub show: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// `satse-count`, `fixed-phi` or `depth`.
    #[arg(long)]
    pub axis: AblationAxis,
    /// Comma-separated axis values.
    #[arg(long)]
    pub values: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Write the table here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// Ordered `key=value` record of a run. Each line is `<byte length> key=value`,
/// so values may span lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let body = format!("{k}={v}");
            let _ = writeln!(out, "{} {body}", body.len());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let offset = text.len() - rest.len();
            let bad = |detail: &str| Error::Format {
                offset: offset as u64,
                detail: detail.to_string(),
            };
            let (len, tail) = rest.split_once(' ').ok_or_else(|| bad("missing length prefix"))?;
            let len: usize = len.parse().map_err(|_| bad("bad length prefix"))?;
            let body = tail.get(..len).ok_or_else(|| bad("entry shorter than its length"))?;
            let (k, v) = body.split_once('=').ok_or_else(|| bad("entry without '='"))?;
            entries.push((k.to_string(), v.to_string()));
            rest = tail[len..]
                .strip_prefix('\n')
                .ok_or_else(|| bad("entry not newline-terminated"))?;
        }
        Ok(RunManifest { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of every `record_id:split` pair in storage order.
pub fn split_hash(dataset: &EcgDataset) -> String {
    let mut text = String::new();
    for r in &dataset.records {
        let _ = writeln!(text, "{}:{}", r.record_id, r.split.as_str());
    }
    sha256_hex(text.as_bytes())
}

fn unix_time() -> String {
    let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("{}.{:03}", d.as_secs(), d.subsec_millis())
}

fn parse_fractions(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("bad split fractions {text}")))?;
    parts
        .try_into()
        .map_err(|_| Error::invalid(format!("expected three split fractions, got {text}")))
}

/// Applies a settings file to whichever of the two targets owns each key.
fn apply_settings_file(path: &Path, cfg: &mut ModelConfig, hyper: &mut Hyperparams) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("{}: line without '=': {line}", path.display())))?;
        if !cfg.apply(k.trim(), v)? && !hyper.apply(k.trim(), v)? {
            return Err(Error::invalid(format!("{}: unknown key {k}", path.display())));
        }
    }
    Ok(())
}

impl ModelArgs {
    fn apply(&self, cfg: &mut ModelConfig) -> Result<()> {
        if let Some(b) = self.backbone {
            cfg.backbone = b;
        }
        if let Some(w) = &self.widths {
            cfg.apply("widths", w)?;
        }
        if let Some(l) = self.input_length {
            cfg.input_length = l;
        }
        if let Some(n) = self.satse_blocks {
            if n > cfg.stages() {
                return Err(Error::invalid(format!(
                    "--satse-blocks {n} exceeds {} stages",
                    cfg.stages()
                )));
            }
            *cfg = cfg.clone().with_satse_count(n);
        }
        if let Some(phi) = self.fixed_phi {
            cfg.fixed_phi = Some(phi);
        }
        if let Some(phi) = self.phi_init {
            cfg.phi_init = phi;
        }
        if let Some(gamma) = self.gamma_init {
            cfg.gamma_init = gamma;
        }
        if let Some(mode) = self.mask_mode {
            cfg.mask_index_mode = mode;
        }
        if self.double_softmax {
            cfg.double_softmax = true;
        }
        if self.no_stem_maxpool {
            cfg.stem_maxpool = false;
        }
        Ok(())
    }
}

impl HyperArgs {
    fn apply(&self, h: &mut Hyperparams) {
        let HyperArgs {
            epochs,
            batch_size,
            lr,
            weight_decay,
            lr_drop_epoch,
            lr_drop_factor,
            seed,
        } = *self;
        h.epochs = epochs.unwrap_or(h.epochs);
        h.batch_size = batch_size.unwrap_or(h.batch_size);
        h.lr = lr.unwrap_or(h.lr);
        h.weight_decay = weight_decay.unwrap_or(h.weight_decay);
        h.lr_drop_epoch = lr_drop_epoch.unwrap_or(h.lr_drop_epoch);
        h.lr_drop_factor = lr_drop_factor.unwrap_or(h.lr_drop_factor);
        h.seed = seed.unwrap_or(h.seed);
    }
}

/// Loads and pads a dataset, then resolves model and training settings against it.
fn resolve_settings(
    data: &Path,
    model: &ModelArgs,
    hyper: &HyperArgs,
) -> Result<(EcgDataset, Vec<u8>, ModelConfig, Hyperparams)> {
    let bytes = std::fs::read(data)?;
    let dataset = pad_to_max(&crate::data::decode_ecgb(&bytes)?);
    let mut cfg = ModelConfig {
        n_classes: dataset.n_classes(),
        n_leads: dataset.n_leads,
        input_length: dataset.max_length(),
        ..Default::default()
    };
    let mut h = Hyperparams::default();
    if let Some(path) = &model.config {
        apply_settings_file(path, &mut cfg, &mut h)?;
    }
    model.apply(&mut cfg)?;
    hyper.apply(&mut h);
    cfg.validate()?;
    h.validate()?;
    Ok((dataset, bytes, cfg, h))
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let fractions = parse_fractions(&args.split)?;
    let dataset = synth_generate(&SynthSpec {
        n_per_class: args.n_per_class,
        n_classes: args.classes as usize,
        n_leads: args.leads,
        length: args.length,
        noise_std: args.noise,
        seed: args.seed,
    })?;
    let dataset = stratified_split(&dataset, fractions, args.seed)?;
    write_ecgb(&dataset, &args.out)?;
    let count = |s| dataset.indices(s).len();
    writeln!(
        out,
        "wrote {} records ({} train / {} val / {} test) to {}",
        dataset.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        args.out.display()
    )?;
    Ok(())
}

fn metrics_text(report: &MetricsReport, class_names: &[String]) -> String {
    format!("{}\n{}", report.to_text(class_names), report.to_key_values())
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let (dataset, bytes, cfg, hyper) = resolve_settings(&args.data, &args.model, &args.hyper)?;
    writeln!(out, "hyperparameters: {}", hyper.echo())?;
    std::fs::create_dir_all(&args.out_dir)?;
    let model_path = args.out_dir.join("model.scdn");
    let trace_path = args.out_dir.join("trace.csv");
    let metrics_path = args.out_dir.join("metrics_val.txt");
    let manifest_path = args.out_dir.join("manifest.txt");
    let mut model = build_model(&cfg, hyper.seed)?;

    let mut manifest = RunManifest::default();
    manifest.set("command", "train");
    manifest.set("status", "running");
    manifest.set("start_time", unix_time());
    manifest.set("seed", hyper.seed.to_string());
    manifest.set("config", cfg.to_text());
    manifest.set("hyperparams", hyper.to_text());
    manifest.set("parameter_count", model.parameter_count().to_string());
    manifest.set("dataset", args.data.display().to_string());
    manifest.set("dataset_sha256", sha256_hex(&bytes));
    manifest.set("split_hash", split_hash(&dataset));
    manifest.set("model_path", model_path.display().to_string());
    manifest.set("trace_path", trace_path.display().to_string());
    manifest.set("metrics_path", metrics_path.display().to_string());
    manifest.write(&manifest_path)?;

    let result = train(&mut model, &dataset, &hyper);
    let trace = match result {
        Ok(trace) => trace,
        Err(e) => {
            manifest.set("status", format!("failed: {e}"));
            manifest.set("end_time", unix_time());
            manifest.write(&manifest_path)?;
            return Err(e);
        }
    };
    write_atomic(&trace_path, trace.to_csv().as_bytes())?;
    save_model(&model, &model_path)?;
    if dataset.indices(Split::Val).is_empty() {
        log::warn!("validation split is empty; skipping final evaluation");
        manifest.set("metrics_path", "none");
    } else {
        let report = evaluate(&model, &dataset, Split::Val)?;
        let text = metrics_text(&report, &dataset.class_names);
        write_atomic(&metrics_path, text.as_bytes())?;
        writeln!(out, "validation metrics\n{}", report.to_text(&dataset.class_names))?;
    }
    manifest.set(
        "final_loss",
        trace.rows.last().map_or(String::new(), |r| r.loss.to_string()),
    );
    manifest.set("status", "completed");
    manifest.set("end_time", unix_time());
    manifest.write(&manifest_path)?;
    writeln!(out, "wrote {}", args.out_dir.display())?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&args.model)?;
    let dataset = pad_to_max(&read_ecgb(&args.data)?);
    let report = evaluate(&model, &dataset, args.split)?;
    let text = metrics_text(&report, &dataset.class_names);
    if let Some(path) = &args.out {
        write_atomic(path, text.as_bytes())?;
    }
    write!(out, "{text}")?;
    Ok(())
}

fn matches_param(name: &str, filters: &[String]) -> bool {
    filters.is_empty()
        || filters
            .iter()
            .any(|f| name == f || name.rsplit('.').next() == Some(f.as_str()))
}

/// Returns whether every checked parameter is within tolerance.
pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let mut cfg = ModelConfig::tiny();
    if let Some(path) = &args.config {
        apply_settings_file(path, &mut cfg, &mut Hyperparams::default())?;
    }
    let mut model = build_model(&cfg, args.seed)?;
    if model.parameter_count() > GRADCHECK_MAX_PARAMS || cfg.input_length > GRADCHECK_MAX_LENGTH {
        return Err(Error::invalid(format!(
            "gradient check needs a tiny model (at most {GRADCHECK_MAX_PARAMS} parameters, length {GRADCHECK_MAX_LENGTH}); got {} and {}",
            model.parameter_count(),
            cfg.input_length
        )));
    }
    perturb_satse(&mut model, args.seed);
    let report = check_model_gradients(&model, 2, args.seed, args.epsilon, args.tolerance, |n| {
        matches_param(n, &args.param)
    })?;
    if report.entries.is_empty() {
        return Err(Error::invalid(format!("no parameter matches {:?}", args.param)));
    }
    writeln!(
        out,
        "{:<32} {:>12} {:>8} {:>14} {:>14}",
        "parameter", "rel_error", "index", "analytic", "numeric"
    )?;
    for (name, e) in report.worst(args.show) {
        writeln!(
            out,
            "{name:<32} {:>12.3e} {:>8} {:>14.6e} {:>14.6e}{}",
            e.max_rel_error,
            e.worst_index,
            e.analytic,
            e.numeric,
            if e.non_finite.is_empty() { "" } else { " non-finite" }
        )?;
    }
    let passed = report.passed();
    writeln!(
        out,
        "{} parameters checked, max relative error {:.3e}, tolerance {:e}: {}",
        report.entries.len(),
        report.max_rel_error(),
        args.tolerance,
        if passed { "PASS" } else { "FAIL" }
    )?;
    Ok(passed)
}

pub fn cmd_ablate(args: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let (dataset, _, cfg, hyper) = resolve_settings(&args.data, &args.model, &args.hyper)?;
    let values: Vec<String> = args.values.split(',').map(|v| v.trim().to_string()).collect();
    let table = run_ablation(&cfg, args.axis, &values, &dataset, &hyper, args.repeats)?;
    let text = table.render();
    if let Some(path) = &args.out {
        write_atomic(path, text.as_bytes())?;
    }
    write!(out, "{text}")?;
    Ok(())
}

/// Runs a parsed command. `Ok(false)` means the command ran but its check failed.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<bool> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, out).map(|_| true),
        Command::Train(a) => cmd_train(a, out).map(|_| true),
        Command::Eval(a) => cmd_eval(a, out).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Ablate(a) => cmd_ablate(a, out).map(|_| true),
    }
}

/// Parses `args` (including the program name) and runs the command, returning the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(out, "{}", e.render());
            return e.exit_code();
        }
    };
    match execute(&cli, out) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_with_multiline_values() {
        let mut m = RunManifest::default();
        m.set("config", "a=1\nb=2\n");
        m.set("seed", "7");
        m.set("seed", "8");
        let text = m.to_text();
        assert!(text.starts_with("15 config=a=1\nb=2\n\n"));
        assert_eq!(RunManifest::parse(&text).unwrap(), m);
        assert_eq!(m.get("seed"), Some("8"));
        assert!(RunManifest::parse("99 x=1\n").is_err());
    }

    #[test]
    fn param_filter_matches_last_segment() {
        let f = vec!["phi".to_string()];
        assert!(matches_param("satse1.phi", &f));
        assert!(!matches_param("satse1.gamma", &f));
        assert!(matches_param("anything", &[]));
    }

    #[test]
    fn fractions_parse() {
        assert_eq!(parse_fractions("0.8, 0.1,0.1").unwrap(), [0.8, 0.1, 0.1]);
        assert!(parse_fractions("0.8,0.2").is_err());
    }
}
