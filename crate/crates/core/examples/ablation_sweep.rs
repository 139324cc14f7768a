//! Sweeps the number of SATSE blocks, a frozen threshold and backbone depth on a micro dataset.

use scdnn::ablation::{run_ablation, AblationAxis};
use scdnn::data::{stratified_split, synth_generate, SynthSpec};
use scdnn::model::ModelConfig;
use scdnn::train::Hyperparams;

fn main() -> scdnn::Result<()> {
    let dataset = synth_generate(&SynthSpec {
        n_per_class: 20,
        n_classes: 3,
        n_leads: 12,
        length: 128,
        noise_std: 0.05,
        seed: 2,
    })?;
    let dataset = stratified_split(&dataset, [0.6, 0.2, 0.2], 2)?;
    let base = ModelConfig {
        n_classes: 3,
        widths: vec![8, 8, 16, 16],
        input_length: 128,
        ..Default::default()
    };
    let hyper = Hyperparams {
        epochs: 4,
        batch_size: 8,
        lr: 3e-3,
        lr_drop_epoch: 3,
        seed: 2,
        ..Default::default()
    };

    let sweeps: [(AblationAxis, &[&str]); 3] = [
        (AblationAxis::SatseCount, &["0", "1", "2", "3", "4"]),
        (AblationAxis::FixedPhi, &["0.1", "0.2", "0.3", "0.4"]),
        (AblationAxis::Depth, &["resnet18", "resnet34", "resnet50"]),
    ];
    for (axis, values) in sweeps {
        let values: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        let table = run_ablation(&base, axis, &values, &dataset, &hyper, 2)?;
        println!("{}", table.render());
    }
    Ok(())
}
