//! Forward and backward kernels on flat row-major buffers.

/// Output length of a strided, padded window sweep, or `None` when it would be empty.
pub fn window_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Range of output positions `t` whose input index `t*stride + tap - padding` lies in `[0, len)`.
fn valid_range(len: usize, out_len: usize, tap: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > tap {
        (padding - tap).div_ceil(stride)
    } else {
        0
    };
    if len + padding < tap + 1 {
        return (0, 0);
    }
    let hi = ((len - 1 + padding - tap) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_len: usize,
}

pub fn conv1d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.c_out * g.out_len];
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let row = &mut out[(b * g.c_out + o) * g.out_len..][..g.out_len];
            if let Some(bias) = bias {
                row.fill(bias[o]);
            }
            for i in 0..g.c_in {
                let xrow = &x[(b * g.c_in + i) * g.len..][..g.len];
                for tap in 0..g.kernel {
                    let wv = w[(o * g.c_in + i) * g.kernel + tap];
                    let (lo, hi) = valid_range(g.len, g.out_len, tap, g.stride, g.padding);
                    if lo >= hi {
                        continue;
                    }
                    let start = lo * g.stride + tap - g.padding;
                    if g.stride == 1 {
                        for (r, xv) in row[lo..hi].iter_mut().zip(&xrow[start..]) {
                            *r += wv * xv;
                        }
                    } else {
                        for (r, xv) in row[lo..hi].iter_mut().zip(xrow[start..].iter().step_by(g.stride)) {
                            *r += wv * xv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns gradients for (input, weight, bias); the input gradient is skipped when not needed.
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    g: ConvGeom,
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut gx = need_input.then(|| vec![0.0; x.len()]);
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.c_out];
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let grow = &grad_out[(b * g.c_out + o) * g.out_len..][..g.out_len];
            gb[o] += grow.iter().sum::<f64>();
            for i in 0..g.c_in {
                let xoff = (b * g.c_in + i) * g.len;
                let xrow = &x[xoff..][..g.len];
                for tap in 0..g.kernel {
                    let widx = (o * g.c_in + i) * g.kernel + tap;
                    let (lo, hi) = valid_range(g.len, g.out_len, tap, g.stride, g.padding);
                    if lo >= hi {
                        continue;
                    }
                    let start = lo * g.stride + tap - g.padding;
                    let wv = w[widx];
                    if g.stride == 1 {
                        let mut acc = 0.0;
                        for (gv, xv) in grow[lo..hi].iter().zip(&xrow[start..]) {
                            acc += gv * xv;
                        }
                        gw[widx] += acc;
                        if let Some(gx) = gx.as_mut() {
                            for (d, gv) in gx[xoff + start..].iter_mut().zip(&grow[lo..hi]) {
                                *d += wv * gv;
                            }
                        }
                    } else {
                        let mut acc = 0.0;
                        for (gv, xv) in grow[lo..hi].iter().zip(xrow[start..].iter().step_by(g.stride)) {
                            acc += gv * xv;
                        }
                        gw[widx] += acc;
                        if let Some(gx) = gx.as_mut() {
                            for (d, gv) in gx[xoff + start..].iter_mut().step_by(g.stride).zip(&grow[lo..hi]) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Per-channel batch statistics over (B, L): mean and biased variance.
pub fn channel_stats(x: &[f64], batch: usize, channels: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (batch * len) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for b in 0..batch {
            s += x[(b * channels + c) * len..][..len].iter().sum::<f64>();
        }
        let m = s / n;
        let mut v = 0.0;
        for b in 0..batch {
            v += x[(b * channels + c) * len..][..len]
                .iter()
                .map(|&t| (t - m) * (t - m))
                .sum::<f64>();
        }
        mean[c] = m;
        var[c] = v / n;
    }
    (mean, var)
}

/// Normalized activations `(x - mean) * inv_std` per channel.
pub fn normalize(x: &[f64], mean: &[f64], inv_std: &[f64], batch: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * len;
            for (o, v) in out[off..off + len].iter_mut().zip(&x[off..off + len]) {
                *o = (v - mean[c]) * inv_std[c];
            }
        }
    }
    out
}

pub fn affine(xhat: &[f64], scale: &[f64], shift: &[f64], batch: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; xhat.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * len;
            for (o, v) in out[off..off + len].iter_mut().zip(&xhat[off..off + len]) {
                *o = scale[c] * v + shift[c];
            }
        }
    }
    out
}

/// Per-channel sums of `g` and `g * xhat`.
pub fn channel_grad_sums(
    grad: &[f64],
    xhat: &[f64],
    batch: usize,
    channels: usize,
    len: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut sum_g = vec![0.0; channels];
    let mut sum_gx = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * len;
            let gr = &grad[off..off + len];
            let xr = &xhat[off..off + len];
            sum_g[c] += gr.iter().sum::<f64>();
            sum_gx[c] += gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    (sum_g, sum_gx)
}

/// Max over padded windows; returns values and the winning input index (lowest on ties).
pub fn max_pool_forward(
    x: &[f64],
    rows: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut out = vec![f64::NEG_INFINITY; rows * out_len];
    let mut arg = vec![0usize; rows * out_len];
    for r in 0..rows {
        let xrow = &x[r * len..][..len];
        for t in 0..out_len {
            let start = t * stride;
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = usize::MAX;
            for tap in 0..kernel {
                let pos = start + tap;
                if pos < padding || pos - padding >= len {
                    continue;
                }
                let v = xrow[pos - padding];
                if best_idx == usize::MAX || v > best {
                    best = v;
                    best_idx = pos - padding;
                }
            }
            out[r * out_len + t] = best;
            arg[r * out_len + t] = r * len + best_idx;
        }
    }
    (out, arg)
}
