//! Generates a synthetic three-class ECG set, trains a reduced network and reports test metrics.
//!
//! ```text
//! cargo run --release --example synth_and_train -- [epochs]
//! ```
//!
//! Twenty epochs take a few minutes on one core.

use scdnn::data::{stratified_split, synth_generate, Split, SynthSpec};
use scdnn::metrics::evaluate;
use scdnn::model::{build_model, ModelConfig};
use scdnn::train::{train, Hyperparams};

fn main() -> scdnn::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let seed = 5;

    let dataset = synth_generate(&SynthSpec {
        n_per_class: 150,
        n_classes: 3,
        n_leads: 12,
        length: 512,
        noise_std: 0.05,
        seed,
    })?;
    let dataset = stratified_split(&dataset, [0.8, 0.1, 0.1], seed)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{}: {} records", split.as_str(), dataset.indices(split).len());
    }

    let mut model = build_model(&ModelConfig::reduced(3), seed)?;
    println!("{} parameters", model.parameter_count());
    let hyper = Hyperparams {
        epochs,
        lr_drop_epoch: epochs.min(20),
        seed,
        ..Default::default()
    };
    println!("{}", hyper.echo());

    let trace = train(&mut model, &dataset, &hyper)?;
    for row in &trace.rows {
        let phi: Vec<String> = row.blocks.iter().flatten().map(|b| format!("{:.4}", b.phi)).collect();
        println!(
            "epoch {:2}  loss {:.4}  lr {:e}  phi [{}]",
            row.epoch,
            row.loss,
            row.lr,
            phi.join(" ")
        );
    }

    let report = evaluate(&model, &dataset, Split::Test)?;
    print!("{}", report.to_text(&dataset.class_names));
    Ok(())
}
