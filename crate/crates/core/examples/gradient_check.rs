//! Finite-difference check of every gradient in a small model, SATSE parameters included.

use scdnn::model::{build_model, check_model_gradients, perturb_satse, ModelConfig};

fn main() -> scdnn::Result<()> {
    let mut model = build_model(&ModelConfig::tiny(), 1)?;
    // Away from lambda = 0 so the threshold and slope receive nonzero gradients.
    perturb_satse(&mut model, 1);
    println!("{} parameters", model.parameter_count());

    let report = check_model_gradients(&model, 2, 1, 1e-5, 1e-4, |_| true)?;
    println!("{:<32} {:>12}", "parameter", "rel_error");
    for (name, entry) in report.worst(report.entries.len()) {
        println!("{name:<32} {:>12.3e}", entry.max_rel_error);
    }
    println!(
        "max relative error {:.3e}: {}",
        report.max_rel_error(),
        if report.passed() { "PASS" } else { "FAIL" }
    );
    Ok(())
}
