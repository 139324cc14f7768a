use std::collections::BTreeMap;

use crate::autodiff::GradientMap;
use crate::model::{ParamKind, ScdnnModel};

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update of `param` in place. `step` counts from 1.
///
/// `weight_decay * param` is added to the gradient before the moment updates.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    moments: &mut Moments,
    step: u64,
    lr: f64,
    weight_decay: f64,
    cfg: &AdamConfig,
) {
    assert_eq!(param.len(), grad.len(), "parameter and gradient lengths differ");
    if moments.m.len() != param.len() {
        moments.m = vec![0.0; param.len()];
        moments.v = vec![0.0; param.len()];
    }
    let t = step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..param.len() {
        let g = grad[i] + weight_decay * param[i];
        let m = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        param[i] -= lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
    }
}

/// Optimizer state for a whole model, keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
    kinds: BTreeMap<String, ParamKind>,
}

impl AdamState {
    pub fn new(model: &ScdnnModel) -> Self {
        AdamState {
            step: 0,
            moments: BTreeMap::new(),
            kinds: model.parameters().into_iter().map(|p| (p.name, p.kind)).collect(),
        }
    }
}

/// Applies one step to every parameter that has a gradient. Decay skips
/// normalization affines and SATSE scalars.
pub fn adam_step(
    model: &mut ScdnnModel,
    grads: &GradientMap,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let step = state.step;
    let AdamState { moments, kinds, .. } = state;
    model.visit_parameters_mut(|name, data| {
        let Some(g) = grads.get(name) else { return };
        let decay = match kinds.get(name) {
            Some(kind) if kind.decays() => weight_decay,
            _ => 0.0,
        };
        let entry = moments.entry(name.to_string()).or_default();
        adam_update(data, g.data(), entry, step, lr, decay, cfg);
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = [3.0, -0.001, 40.0];
        let mut m = Moments::default();
        adam_update(&mut p, &g, &mut m, 1, 0.01, 0.0, &AdamConfig::default());
        let expect = [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = vec![1.5, -0.25];
        let mut m = Moments::default();
        for step in 1..=5 {
            adam_update(&mut p, &[0.0, 0.0], &mut m, step, 0.1, 0.0, &AdamConfig::default());
        }
        assert_eq!(p, vec![1.5, -0.25]);
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut x = [5.0];
        let mut m = Moments::default();
        for step in 1..=200 {
            let g = [2.0 * x[0]];
            adam_update(&mut x, &g, &mut m, step, 0.1, 0.0, &AdamConfig::default());
        }
        assert!(x[0].abs() < 0.5, "x = {}", x[0]);
    }

    #[test]
    fn coupled_decay_pulls_toward_zero() {
        let mut p = vec![2.0];
        let mut m = Moments::default();
        adam_update(&mut p, &[0.0], &mut m, 1, 0.1, 0.5, &AdamConfig::default());
        assert!((p[0] - 1.9).abs() < 1e-6);
    }
}
