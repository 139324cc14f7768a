//! Times eval-mode forward passes of the full-size network at a few batch sizes.
//!
//! ```text
//! cargo run --release --example inference_benchmark -- [length]
//! ```

use scdnn::ablation::benchmark_inference;
use scdnn::data::{synth_generate, SynthSpec};
use scdnn::model::{build_model, ModelConfig};

fn main() -> scdnn::Result<()> {
    let length: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let dataset = synth_generate(&SynthSpec {
        n_per_class: 4,
        n_classes: 5,
        n_leads: 12,
        length,
        noise_std: 0.05,
        seed: 3,
    })?;
    let cfg = ModelConfig {
        input_length: length,
        ..Default::default()
    };
    for (label, cfg) in [("with SATSE", cfg.clone()), ("plain backbone", cfg.with_satse_count(0))] {
        let model = build_model(&cfg, 3)?;
        println!(
            "{label}: {} parameters, input (B, 12, {length})",
            model.parameter_count()
        );
        for batch in [1, 4, 16] {
            let t = benchmark_inference(&model, &dataset, batch, 1, 3)?;
            println!(
                "  batch {:2}: {:8.2} ms ± {:.2} ms per batch, {:.2} ms per record",
                t.batch_size,
                1e3 * t.mean,
                1e3 * t.std,
                1e3 * t.mean / t.batch_size as f64
            );
        }
    }
    Ok(())
}
