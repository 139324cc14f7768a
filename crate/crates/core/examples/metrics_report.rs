//! Confusion matrix and macro-averaged metrics from label lists.

use scdnn::metrics::{argmax_rows, MetricsReport};
use scdnn::Tensor;

fn main() -> scdnn::Result<()> {
    let names: Vec<String> = ["normal", "wide_qrs", "t_inversion"]
        .iter()
        .map(|s| s.to_string())
        .collect();

    // Ties in the logits go to the lowest class index.
    let logits = Tensor::from_vec(
        &[6, 3],
        vec![
            2.0, 0.1, 0.3, //
            0.5, 0.5, 0.1, //
            0.0, 1.5, 0.2, //
            0.2, 0.9, 0.8, //
            0.1, 0.2, 3.0, //
            0.0, 0.0, 0.0,
        ],
    )?;
    let predicted = argmax_rows(&logits);
    let truth = [0, 1, 1, 2, 2, 2];
    println!("truth     {truth:?}\npredicted {predicted:?}\n");
    let report = MetricsReport::from_predictions(&truth, &predicted, 3)?;
    print!("{}", report.to_text(&names));

    let never_predicted = MetricsReport::from_predictions(&[0, 0, 1, 1], &[0, 0, 0, 0], 2)?;
    println!(
        "\nall-one-class predictions: macro f1 {:.4}, zero-denominator classes {:?}",
        never_predicted.macro_f1,
        never_predicted.zero_denominator_classes()
    );
    Ok(())
}
