//! Forward and inverse transforms at a few lengths, checked against direct summation.
//!
//! ```text
//! cargo run --release --example spectral_transforms
//! ```

use num_complex::Complex64;
use scdnn::spectral::{dft, dft_batch, idft, idft_batch};
use scdnn::Tensor;

fn direct(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, v)| v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * t) as f64 / n))
                .sum()
        })
        .collect()
}

fn main() -> scdnn::Result<()> {
    // Radix-2, short direct, and Bluestein paths.
    for len in [8, 97, 500, 1024] {
        let x: Vec<Complex64> = (0..len)
            .map(|t| Complex64::new((0.3 * t as f64).sin(), (0.05 * t as f64).cos()))
            .collect();
        let spectrum = dft(&x)?;
        let back = idft(&spectrum)?;
        let err_oracle = spectrum
            .iter()
            .zip(direct(&x))
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let err_round = back.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        println!("L={len:5}  |dft - direct| {err_oracle:.2e}  |idft(dft(x)) - x| {err_round:.2e}");
    }

    // A cosine at bin 3 puts L/2 at bins 3 and L-3.
    let len = 32;
    let cosine: Vec<f64> = (0..len)
        .map(|t| (2.0 * std::f64::consts::PI * 3.0 * t as f64 / len as f64).cos())
        .collect();
    let batch = Tensor::from_vec(&[1, 1, len], cosine)?;
    let spec = dft_batch(&batch)?;
    let peaks: Vec<(usize, f64)> = spec
        .values
        .complex_values()
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.norm() > 1e-9)
        .map(|(j, c)| (j, c.re))
        .collect();
    println!("cosine spectrum peaks: {peaks:?}");
    let restored = idft_batch(&spec)?;
    println!("batch round trip error {:.2e}", restored.re().max_abs_diff(&batch));
    Ok(())
}
