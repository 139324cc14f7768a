use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ScdnnModel;
use crate::autodiff::{grad_check, GradCheckReport};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// Moves every SATSE block off its initial point: random `W`, nonzero lambdas
/// and a threshold inside the clamp range. At the initial point (`lambda = 0`)
/// the threshold and weight gradients vanish identically.
pub fn perturb_satse(model: &mut ScdnnModel, seed: u64) {
    let mut rng = rng_for(seed, "perturb");
    let fixed_phi = model.config.fixed_phi.is_some();
    for p in model.satse_blocks_mut() {
        if !fixed_phi {
            p.phi = rng.random_range(0.2..0.6);
        }
        p.gamma = rng.random_range(0.3..1.5);
        p.lambda_low = rng.random_range(0.3..1.0);
        p.lambda_high = -rng.random_range(0.3..1.0);
        for v in p.weight_re.data_mut() {
            *v = 1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        for v in p.weight_im.data_mut() {
            *v = 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Random `(batch, n_leads, input_length)` input and labels for a gradient check.
pub fn probe_batch(model: &ScdnnModel, batch: usize, seed: u64) -> (Tensor, Tensor) {
    let cfg = &model.config;
    let mut rng = rng_for(seed, "probe");
    let n = batch * cfg.n_leads * cfg.input_length;
    let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let labels: Vec<f64> = (0..batch).map(|b| (b % cfg.n_classes) as f64).collect();
    (
        Tensor::from_vec(&[batch, cfg.n_leads, cfg.input_length], x).expect("sized"),
        Tensor::from_vec(&[batch], labels).expect("sized"),
    )
}

/// Finite-difference check of the full training loss (train-mode batch norm).
pub fn check_model_gradients(
    model: &ScdnnModel,
    batch: usize,
    seed: u64,
    epsilon: f64,
    tolerance: f64,
    filter: impl Fn(&str) -> bool,
) -> Result<GradCheckReport> {
    if batch < 2 {
        return Err(Error::invalid("gradient check needs a batch of at least 2"));
    }
    let (x, labels) = probe_batch(model, batch, seed);
    let mut mg = model.build_graph(batch, model.config.input_length, Mode::Train, true)?;
    mg.graph.forward_eval(&[("x", x), ("labels", labels)])?;
    let loss = mg.loss.expect("built with loss");
    grad_check(&mut mg.graph, loss, epsilon, tolerance, filter)
}
