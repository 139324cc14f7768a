//! Saves and reloads a dataset container and a model, then shows how damaged files are reported.

use scdnn::data::{decode_ecgb, read_ecgb, synth_generate, write_ecgb, SynthSpec};
use scdnn::model::io::decode_model;
use scdnn::model::{build_model, load_model, save_model, ModelConfig};

fn main() -> scdnn::Result<()> {
    let dir = std::env::temp_dir().join(format!("scdnn-persistence-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    let dataset = synth_generate(&SynthSpec {
        n_per_class: 4,
        n_classes: 3,
        n_leads: 12,
        length: 256,
        noise_std: 0.05,
        seed: 1,
    })?;
    let data_path = dir.join("synthetic.ecgb");
    write_ecgb(&dataset, &data_path)?;
    let restored = read_ecgb(&data_path)?;
    println!(
        "{}: {} bytes, {} records, identical after reload: {}",
        data_path.display(),
        std::fs::metadata(&data_path)?.len(),
        restored.len(),
        restored == dataset
    );

    let model = build_model(&ModelConfig::tiny(), 1)?;
    let model_path = dir.join("tiny.scdn");
    save_model(&model, &model_path)?;
    let loaded = load_model(&model_path)?;
    println!(
        "{}: {} bytes, identical after reload: {}",
        model_path.display(),
        std::fs::metadata(&model_path)?.len(),
        loaded == model
    );

    let bytes = std::fs::read(&data_path)?;
    match decode_ecgb(&bytes[..bytes.len() - 7]) {
        Ok(_) => println!("truncated dataset unexpectedly decoded"),
        Err(e) => println!("truncated dataset: {e}"),
    }
    let mut bytes = std::fs::read(&model_path)?;
    bytes[0] ^= 0x20;
    match decode_model(&bytes) {
        Ok(_) => println!("damaged model unexpectedly decoded"),
        Err(e) => println!("damaged model: {e}"),
    }

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
