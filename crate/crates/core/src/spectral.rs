//! Exact discrete Fourier transforms of arbitrary length.
//!
//! Forward transforms are unnormalized, `X[j] = sum_n x[n] e^{-2 pi i n j / L}`;
//! inverse transforms carry the `1/L` factor. Lengths that are powers of two
//! use an iterative radix-2 kernel, lengths up to [`DIRECT_MAX_LEN`] are
//! summed directly, and every other length goes through Bluestein's chirp-z
//! convolution. No path pads the signal, so bin `j` always means frequency
//! `j / L`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Non-power-of-two lengths at or below this are transformed by direct summation.
pub const DIRECT_MAX_LEN: usize = 128;

#[derive(Debug, Clone)]
enum Strategy {
    Direct { twiddles: Vec<Complex64> },
    Radix2 { twiddles: Vec<Complex64> },
    Bluestein(Box<Bluestein>),
}

#[derive(Debug, Clone)]
struct Bluestein {
    chirp: Vec<Complex64>,
    inner: FftPlan,
    kernel_spectrum: Vec<Complex64>,
}

/// Precomputed forward transform for one length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    strategy: Strategy,
}

fn unit_root(numerator: usize, denominator: usize) -> Complex64 {
    let angle = -2.0 * PI * numerator as f64 / denominator as f64;
    Complex64::new(angle.cos(), angle.sin())
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("transform length must be at least 1"));
        }
        let strategy = if len.is_power_of_two() {
            Strategy::Radix2 {
                twiddles: (0..len / 2).map(|k| unit_root(k, len)).collect(),
            }
        } else if len <= DIRECT_MAX_LEN {
            Strategy::Direct {
                twiddles: (0..len).map(|k| unit_root(k, len)).collect(),
            }
        } else {
            Strategy::Bluestein(Box::new(Bluestein::new(len)?))
        };
        Ok(FftPlan { len, strategy })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        match &self.strategy {
            Strategy::Direct { twiddles } => {
                let input = buf.to_vec();
                let n = self.len;
                for (j, out) in buf.iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    let mut idx = 0usize;
                    for x in &input {
                        acc += twiddles[idx] * x;
                        idx += j;
                        if idx >= n {
                            idx -= n;
                        }
                    }
                    *out = acc;
                }
            }
            Strategy::Radix2 { twiddles } => radix2_in_place(buf, twiddles),
            Strategy::Bluestein(b) => b.forward(buf),
        }
    }

    /// In-place inverse transform including the `1/L` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v = v.conj() * scale;
        }
    }
}

fn radix2_in_place(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let stride = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let w = twiddles[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        size *= 2;
    }
}

impl Bluestein {
    fn new(len: usize) -> Result<Self> {
        // chirp[n] = exp(-i pi n^2 / L); n^2 is reduced mod 2L in integers to keep the angle exact.
        let two_len = 2 * len as u128;
        let chirp: Vec<Complex64> = (0..len)
            .map(|n| {
                let sq = (n as u128 * n as u128 % two_len) as f64;
                let angle = -PI * sq / len as f64;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        let m = (2 * len - 1).next_power_of_two();
        let inner = FftPlan::new(m)?;
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for n in 1..len {
            kernel[n] = chirp[n].conj();
            kernel[m - n] = chirp[n].conj();
        }
        inner.forward(&mut kernel);
        Ok(Bluestein {
            chirp,
            inner,
            kernel_spectrum: kernel,
        })
    }

    fn forward(&self, buf: &mut [Complex64]) {
        let m = self.inner.len;
        let mut work = vec![Complex64::new(0.0, 0.0); m];
        for (w, (x, c)) in work.iter_mut().zip(buf.iter().zip(&self.chirp)) {
            *w = x * c;
        }
        self.inner.forward(&mut work);
        for (w, k) in work.iter_mut().zip(&self.kernel_spectrum) {
            *w *= k;
        }
        self.inner.inverse(&mut work);
        for (out, (w, c)) in buf.iter_mut().zip(work.iter().zip(&self.chirp)) {
            *out = w * c;
        }
    }
}

/// Forward transform of one sequence.
pub fn dft(signal: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(signal.len())?;
    let mut out = signal.to_vec();
    plan.forward(&mut out);
    Ok(out)
}

/// Inverse transform of one sequence (with `1/L`).
pub fn idft(spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(spectrum.len())?;
    let mut out = spectrum.to_vec();
    plan.inverse(&mut out);
    Ok(out)
}

/// Complex spectrum of a `(B, C, L)` batch, transformed along the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Tensor,
    pub origin_length: usize,
}

#[derive(Clone, Copy)]
pub(crate) enum Direction {
    Forward,
    Inverse,
}

/// Transforms every row along the last axis of a real or complex tensor; the result is complex.
pub(crate) fn transform_last_axis(input: &Tensor, direction: Direction) -> Result<Tensor> {
    let len = *input
        .shape()
        .last()
        .ok_or_else(|| Error::invalid("cannot transform a rank-0 tensor"))?;
    let plan = FftPlan::new(len)?;
    let mut out = input.to_complex();
    let mut row = vec![Complex64::new(0.0, 0.0); len];
    for chunk in out.data_mut().chunks_exact_mut(2 * len) {
        for (r, pair) in row.iter_mut().zip(chunk.chunks_exact(2)) {
            *r = Complex64::new(pair[0], pair[1]);
        }
        match direction {
            Direction::Forward => plan.forward(&mut row),
            Direction::Inverse => plan.inverse(&mut row),
        }
        for (r, pair) in row.iter().zip(chunk.chunks_exact_mut(2)) {
            pair[0] = r.re;
            pair[1] = r.im;
        }
    }
    Ok(out)
}

fn check_batch(t: &Tensor) -> Result<()> {
    if t.rank() != 3 || t.shape()[2] == 0 {
        return Err(Error::shape(
            "spectral batch",
            format!("expected (B, C, L) with L >= 1, got {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// Forward transform of every `(b, c)` row of a `(B, C, L)` batch.
pub fn dft_batch(batch: &Tensor) -> Result<Spectrum> {
    check_batch(batch)?;
    Ok(Spectrum {
        values: transform_last_axis(batch, Direction::Forward)?,
        origin_length: batch.shape()[2],
    })
}

/// Inverse transform of every row of a spectrum; the result is a complex `(B, C, L)` tensor.
pub fn idft_batch(spec: &Spectrum) -> Result<Tensor> {
    check_batch(&spec.values)?;
    transform_last_axis(&spec.values, Direction::Inverse)
}
