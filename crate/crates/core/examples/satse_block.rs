//! One spectral enhancement block applied to a two-tone signal.
//!
//! A cosine at bin 3 and another at bin 12 go through the block with `W = 1`.
//! Mixing only the low branch back in doubles the slow tone and leaves the
//! fast one alone; mixing only the high branch does the reverse.

use scdnn::satse::{satse_forward, soft_mask, MaskIndexMode, MaskSide, SatseParams};
use scdnn::Tensor;

const LEN: usize = 32;

fn tone(bin: f64, t: usize) -> f64 {
    (2.0 * std::f64::consts::PI * bin * t as f64 / LEN as f64).cos()
}

/// Amplitude of the cosine at `bin` in a real signal.
fn amplitude(x: &[f64], bin: f64) -> f64 {
    2.0 * x.iter().enumerate().map(|(t, v)| v * tone(bin, t)).sum::<f64>() / LEN as f64
}

fn main() -> scdnn::Result<()> {
    let mode = MaskIndexMode::Symmetric;
    let phi = 0.25;
    let gamma = 2.0;
    println!(
        "masks at phi={phi}, gamma={gamma} (cutoff at bin {}):",
        phi * LEN as f64
    );
    for j in [0, 3, 6, 8, 10, 12, 16] {
        println!(
            "  bin {j:2}  low {:.4}  high {:.4}",
            soft_mask(j, phi, gamma, LEN, MaskSide::Low, mode),
            soft_mask(j, phi, gamma, LEN, MaskSide::High, mode)
        );
    }

    let signal: Vec<f64> = (0..LEN).map(|t| tone(3.0, t) + 0.5 * tone(12.0, t)).collect();
    let f = Tensor::from_vec(&[1, 1, LEN], signal)?;
    let mut params = SatseParams::with_init(1, LEN, mode, phi, 1e3);

    for (lambda_low, lambda_high) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        params.lambda_low = lambda_low;
        params.lambda_high = lambda_high;
        let out = satse_forward(&f, &params)?;
        println!(
            "lambda_low={lambda_low} lambda_high={lambda_high}: bin 3 amplitude {:.4}, bin 12 amplitude {:.4}",
            amplitude(out.data(), 3.0),
            amplitude(out.data(), 12.0)
        );
    }

    let report = params.report();
    println!(
        "parameter report: phi {} gamma {} weight norms {:?}",
        report.phi, report.gamma, report.weight_norms
    );
    Ok(())
}
