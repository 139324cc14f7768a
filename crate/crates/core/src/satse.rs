//! Soft-threshold spectral enhancement block.
//!
//! The block takes a `(B, C, L)` feature map `f`, moves each channel to the
//! frequency domain, splits the spectrum into a low and a high band with two
//! complementary sigmoid masks, weights each band bin-wise with a shared
//! complex matrix `W` of shape `(C, L)`, returns both bands to the time
//! domain, and mixes them back in:
//!
//! ```text
//! out = f + (lambda_low * Re(idft(W * m_low * dft(f))) + lambda_high * Re(idft(W * m_high * dft(f))))
//! ```
//!
//! with `m_high(x) = 1 / (1 + exp(gamma * (phi * L - x)))` and `m_low = 1 - m_high`.
//! The cutoff ratio `phi`, slope `gamma`, `W` and both mixing coefficients are
//! trainable.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PHI_MIN: f64 = 1e-3;
pub const PHI_MAX: f64 = 1.0 - 1e-3;
pub const GAMMA_MIN: f64 = 1e-3;
pub const DEFAULT_PHI: f64 = 0.4;
pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskSide {
    Low,
    High,
}

/// How a bin index is turned into the frequency position the masks threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MaskIndexMode {
    /// `x = j`, the raw bin index.
    Literal,
    /// `x = min(j, L - j)`, so bins `j` and `L - j` share a weight and real signals stay real.
    #[default]
    Symmetric,
}

impl MaskIndexMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskIndexMode::Literal => "literal",
            MaskIndexMode::Symmetric => "symmetric",
        }
    }
}

impl std::str::FromStr for MaskIndexMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(MaskIndexMode::Literal),
            "symmetric" => Ok(MaskIndexMode::Symmetric),
            other => Err(Error::invalid(format!("unknown mask index mode {other}"))),
        }
    }
}

/// Which mask feeds which branch. `Swapped` exchanges them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BranchRoles {
    #[default]
    Standard,
    Swapped,
}

pub fn effective_bin(j: usize, len: usize, mode: MaskIndexMode) -> f64 {
    match mode {
        MaskIndexMode::Literal => j as f64,
        MaskIndexMode::Symmetric => j.min(len - j) as f64,
    }
}

/// `1 / (1 + e^t)` without overflow.
fn logistic_of_neg(t: f64) -> f64 {
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// Soft mask weight in `(0, 1)` for bin `j`.
pub fn soft_mask(j: usize, phi: f64, gamma: f64, len: usize, side: MaskSide, mode: MaskIndexMode) -> f64 {
    let x = effective_bin(j, len, mode);
    let high = logistic_of_neg(gamma * (-x + phi * len as f64));
    match side {
        MaskSide::High => high,
        MaskSide::Low => 1.0 - high,
    }
}

/// Partial derivatives of [`soft_mask`] with respect to `phi` and `gamma`.
pub fn soft_mask_partials(
    j: usize,
    phi: f64,
    gamma: f64,
    len: usize,
    side: MaskSide,
    mode: MaskIndexMode,
) -> (f64, f64) {
    let x = effective_bin(j, len, mode);
    let l = len as f64;
    let s = logistic_of_neg(gamma * (-x + phi * l));
    let slope = -s * (1.0 - s);
    let (dphi, dgamma) = (slope * gamma * l, slope * (phi * l - x));
    match side {
        MaskSide::High => (dphi, dgamma),
        MaskSide::Low => (-dphi, -dgamma),
    }
}

/// Indicator limit of [`soft_mask`] as `gamma -> infinity`: low passes `x <= phi * L`.
pub fn hard_mask(j: usize, phi: f64, len: usize, side: MaskSide, mode: MaskIndexMode) -> f64 {
    let low = effective_bin(j, len, mode) <= phi * len as f64;
    match (side, low) {
        (MaskSide::Low, true) | (MaskSide::High, false) => 1.0,
        _ => 0.0,
    }
}

/// Trainable state of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct SatseParams {
    pub phi: f64,
    pub gamma: f64,
    /// Real part of `W`, shape `(C, L)`.
    pub weight_re: Tensor,
    /// Imaginary part of `W`, shape `(C, L)`.
    pub weight_im: Tensor,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub mask_index_mode: MaskIndexMode,
}

impl SatseParams {
    /// Fresh block: `phi = 0.4`, `gamma = 0.5`, `W = 1`, both lambdas zero.
    pub fn new(channels: usize, len: usize, mode: MaskIndexMode) -> Self {
        Self::with_init(channels, len, mode, DEFAULT_PHI, DEFAULT_GAMMA)
    }

    pub fn with_init(channels: usize, len: usize, mode: MaskIndexMode, phi: f64, gamma: f64) -> Self {
        SatseParams {
            phi,
            gamma,
            weight_re: Tensor::full(&[channels, len], 1.0),
            weight_im: Tensor::zeros(&[channels, len]),
            lambda_low: 0.0,
            lambda_high: 0.0,
            mask_index_mode: mode,
        }
    }

    pub fn channels(&self) -> usize {
        self.weight_re.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.weight_re.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.weight_re.numel() == 0
    }

    /// Real-valued parameter count: both parts of `W` plus the four scalars.
    pub fn parameter_count(&self) -> usize {
        2 * self.weight_re.numel() + 4
    }

    /// Projects `phi` into `[PHI_MIN, PHI_MAX]` and `gamma` onto `[GAMMA_MIN, inf)`.
    pub fn clamp(&mut self) {
        self.phi = self.phi.clamp(PHI_MIN, PHI_MAX);
        self.gamma = self.gamma.max(GAMMA_MIN);
    }

    pub fn report(&self) -> SatseReport {
        satse_param_report(self)
    }
}

/// Snapshot used for trace rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SatseReport {
    pub phi: f64,
    pub gamma: f64,
    pub lambda_low: f64,
    pub lambda_high: f64,
    /// Euclidean norm of each channel's complex weight row.
    pub weight_norms: Vec<f64>,
}

pub fn satse_param_report(params: &SatseParams) -> SatseReport {
    let len = params.len().max(1);
    let weight_norms = params
        .weight_re
        .data()
        .chunks(len)
        .zip(params.weight_im.data().chunks(len))
        .map(|(re, im)| re.iter().chain(im).map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    SatseReport {
        phi: params.phi,
        gamma: params.gamma,
        lambda_low: params.lambda_low,
        lambda_high: params.lambda_high,
        weight_norms,
    }
}

/// Graph handles for one block's parameters.
#[derive(Debug, Clone, Copy)]
pub struct SatseNodes {
    pub phi: NodeId,
    pub gamma: NodeId,
    pub weight_re: NodeId,
    pub weight_im: NodeId,
    pub lambda_low: NodeId,
    pub lambda_high: NodeId,
}

/// Node ids produced by [`build_satse`].
#[derive(Debug, Clone, Copy)]
pub struct SatseTaps {
    pub output: NodeId,
    /// Complex time-domain low branch before real-part extraction.
    pub low_complex: NodeId,
    /// Complex time-domain high branch before real-part extraction.
    pub high_complex: NodeId,
}

/// Appends the block to `graph` acting on the real `(B, C, len)` node `input`.
pub fn build_satse(
    graph: &mut Graph,
    input: NodeId,
    nodes: &SatseNodes,
    len: usize,
    mode: MaskIndexMode,
    roles: BranchRoles,
) -> SatseTaps {
    let spectrum = graph.dft(input);
    let (low_side, high_side) = match roles {
        BranchRoles::Standard => (MaskSide::Low, MaskSide::High),
        BranchRoles::Swapped => (MaskSide::High, MaskSide::Low),
    };
    let low_mask = graph.soft_mask(nodes.phi, nodes.gamma, len, low_side, mode);
    let high_mask = graph.soft_mask(nodes.phi, nodes.gamma, len, high_side, mode);
    let weight = graph.complex_from_parts(nodes.weight_re, nodes.weight_im);

    let low = graph.mask_mul(low_mask, spectrum);
    let low = graph.complex_mul(weight, low);
    let low_complex = graph.idft(low);
    let low_time = graph.real_part(low_complex);

    let high = graph.mask_mul(high_mask, spectrum);
    let high = graph.complex_mul(weight, high);
    let high_complex = graph.idft(high);
    let high_time = graph.real_part(high_complex);

    let low_term = graph.scalar_mul(nodes.lambda_low, low_time);
    let high_term = graph.scalar_mul(nodes.lambda_high, high_time);
    let mix = graph.add(low_term, high_term);
    let output = graph.add(input, mix);
    SatseTaps {
        output,
        low_complex,
        high_complex,
    }
}

fn check_shapes(f: &Tensor, params: &SatseParams) -> Result<()> {
    if f.rank() != 3 || f.is_complex() {
        return Err(Error::shape(
            "satse input",
            format!("expected real (B, C, L), got {:?}", f.shape()),
        ));
    }
    let expect = [f.shape()[1], f.shape()[2]];
    if params.weight_re.shape() != expect || params.weight_im.shape() != expect {
        return Err(Error::shape(
            "satse weight",
            format!(
                "weight {:?} does not match input channels/length {:?}",
                params.weight_re.shape(),
                expect
            ),
        ));
    }
    Ok(())
}

/// Graph holding one block with all parameters as trainable leaves.
pub struct SatseGraph {
    pub graph: Graph,
    pub taps: SatseTaps,
}

pub fn satse_graph(batch_shape: &[usize], params: &SatseParams, roles: BranchRoles) -> SatseGraph {
    let mut graph = Graph::new();
    graph.set_scope("satse");
    let input = graph.input("f", batch_shape);
    let nodes = SatseNodes {
        phi: graph.parameter("phi", Tensor::scalar(params.phi)),
        gamma: graph.parameter("gamma", Tensor::scalar(params.gamma)),
        weight_re: graph.parameter("weight_re", params.weight_re.clone()),
        weight_im: graph.parameter("weight_im", params.weight_im.clone()),
        lambda_low: graph.parameter("lambda_low", Tensor::scalar(params.lambda_low)),
        lambda_high: graph.parameter("lambda_high", Tensor::scalar(params.lambda_high)),
    };
    let taps = build_satse(&mut graph, input, &nodes, batch_shape[2], params.mask_index_mode, roles);
    graph.set_output(taps.output);
    SatseGraph { graph, taps }
}

/// Block output `O = f + lambda_low * f_low + lambda_high * f_high`; same shape as `f`.
pub fn satse_forward(f: &Tensor, params: &SatseParams) -> Result<Tensor> {
    satse_forward_with_roles(f, params, BranchRoles::Standard)
}

pub fn satse_forward_with_roles(f: &Tensor, params: &SatseParams, roles: BranchRoles) -> Result<Tensor> {
    check_shapes(f, params)?;
    let SatseGraph { mut graph, .. } = satse_graph(f.shape(), params, roles);
    let out = graph.forward_eval(&[("f", f.clone())])?;
    if !out.is_finite() {
        return Err(Error::NonFinite("satse output".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn mask_at_cutoff_is_one_half() {
        for (phi, len) in [(0.4, 16), (0.3, 97), (0.123, 1000)] {
            let gamma = 3.7;
            // a bin exactly at phi * L is only reachable through the formula, so evaluate it directly
            let x = phi * len as f64;
            let high = logistic_of_neg(gamma * (-x + phi * len as f64));
            assert_eq!(high, 0.5);
        }
        assert_eq!(soft_mask(4, 0.5, 2.0, 8, MaskSide::High, MaskIndexMode::Literal), 0.5);
        assert_eq!(soft_mask(4, 0.5, 2.0, 8, MaskSide::Low, MaskIndexMode::Literal), 0.5);
    }

    #[test]
    fn steep_low_mask_passes_low_bins() {
        // phi * L = 20, x = 10
        let v = soft_mask(10, 0.5, 1000.0, 40, MaskSide::Low, MaskIndexMode::Literal);
        assert!(v > 1.0 - 1e-9);
        let v = soft_mask(30, 0.5, 1000.0, 40, MaskSide::Low, MaskIndexMode::Literal);
        assert!(v < 1e-9);
    }

    #[test]
    fn masks_do_not_overflow() {
        for gamma in [1e6, 1e300] {
            for j in 0..10 {
                let v = soft_mask(j, 0.5, gamma, 10, MaskSide::High, MaskIndexMode::Literal);
                assert!(v.is_finite() && (0.0..=1.0).contains(&v));
                let (a, b) = soft_mask_partials(j, 0.5, gamma, 10, MaskSide::Low, MaskIndexMode::Literal);
                assert!(!a.is_nan() && !b.is_nan());
            }
        }
    }

    #[test]
    fn hard_mask_examples() {
        let m = MaskIndexMode::Literal;
        assert_eq!(hard_mask(2, 0.5, 10, MaskSide::Low, m), 1.0);
        assert_eq!(hard_mask(2, 0.5, 10, MaskSide::High, m), 0.0);
        assert_eq!(hard_mask(9, 0.5, 10, MaskSide::Low, m), 0.0);
        assert_eq!(hard_mask(9, 0.5, 10, MaskSide::High, m), 1.0);
        // symmetric mode folds bin 9 onto 1
        assert_eq!(hard_mask(9, 0.5, 10, MaskSide::Low, MaskIndexMode::Symmetric), 1.0);
    }

    #[test]
    fn mask_partials_match_finite_differences() {
        let h = 1e-6;
        for side in [MaskSide::Low, MaskSide::High] {
            for mode in [MaskIndexMode::Literal, MaskIndexMode::Symmetric] {
                for j in 0..12 {
                    let (dphi, dgamma) = soft_mask_partials(j, 0.37, 0.8, 12, side, mode);
                    let nphi = (soft_mask(j, 0.37 + h, 0.8, 12, side, mode)
                        - soft_mask(j, 0.37 - h, 0.8, 12, side, mode))
                        / (2.0 * h);
                    let ngam = (soft_mask(j, 0.37, 0.8 + h, 12, side, mode)
                        - soft_mask(j, 0.37, 0.8 - h, 12, side, mode))
                        / (2.0 * h);
                    assert!((dphi - nphi).abs() < 1e-8, "{side:?} {mode:?} {j}");
                    assert!((dgamma - ngam).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn zero_lambdas_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_tensor(&mut rng, &[2, 3, 20]);
        let mut p = SatseParams::new(3, 20, MaskIndexMode::Symmetric);
        p.weight_re = random_tensor(&mut rng, &[3, 20]);
        p.weight_im = random_tensor(&mut rng, &[3, 20]);
        let out = satse_forward(&f, &p).unwrap();
        assert!(out.max_abs_diff(&f) <= 1e-12);
    }

    #[test]
    fn unit_weight_and_lambdas_double_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mode in [MaskIndexMode::Literal, MaskIndexMode::Symmetric] {
            let f = random_tensor(&mut rng, &[3, 2, 33]);
            let mut p = SatseParams::with_init(2, 33, mode, 0.21, 7.0);
            p.lambda_low = 1.0;
            p.lambda_high = 1.0;
            let out = satse_forward(&f, &p).unwrap();
            let twice = f.map(|v| 2.0 * v);
            assert!(out.max_abs_diff(&twice) < 1e-8);
        }
    }

    #[test]
    fn cosine_at_bin_three_passes_or_blocks() {
        let len = 32;
        let data: Vec<f64> = (0..len)
            .map(|n| (2.0 * std::f64::consts::PI * 3.0 * n as f64 / len as f64).cos())
            .collect();
        let f = Tensor::from_vec(&[1, 1, len], data).unwrap();
        let mut p = SatseParams::with_init(1, len, MaskIndexMode::Symmetric, 0.25, 1e3);
        p.lambda_low = 1.0;
        let passed = satse_forward(&f, &p).unwrap();
        assert!(passed.max_abs_diff(&f.map(|v| 2.0 * v)) < 1e-9);
        p.phi = 0.05;
        let blocked = satse_forward(&f, &p).unwrap();
        assert!(blocked.max_abs_diff(&f) < 1e-9);
    }

    #[test]
    fn mismatched_weight_is_rejected() {
        let f = Tensor::zeros(&[1, 2, 8]);
        let p = SatseParams::new(2, 9, MaskIndexMode::Literal);
        assert!(matches!(satse_forward(&f, &p), Err(Error::Shape { .. })));
    }

    #[test]
    fn report_and_clamp() {
        let mut p = SatseParams::new(2, 4, MaskIndexMode::Symmetric);
        let r = p.report();
        assert_eq!((r.phi, r.gamma, r.lambda_low, r.lambda_high), (0.4, 0.5, 0.0, 0.0));
        assert_eq!(r.weight_norms, vec![2.0, 2.0]);
        p.phi = 1.2;
        p.gamma = -5.0;
        p.clamp();
        assert_eq!(p.report().phi, 0.999);
        assert_eq!(p.report().gamma, 1e-3);
    }
}
