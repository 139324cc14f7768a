use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::satse::{MaskIndexMode, MaskSide};
use crate::tensor::Tensor;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn product_of_scalars() {
    let mut g = Graph::new();
    let x = g.parameter("x", Tensor::scalar(3.0));
    let y = g.parameter("y", Tensor::scalar(4.0));
    let p = g.mul(x, y);
    assert_eq!(g.forward_eval(&[]).unwrap().item(), 12.0);
    let grads = g.backward(p).unwrap();
    assert_eq!(grads.get("x").unwrap().item(), 4.0);
    assert_eq!(grads.get("y").unwrap().item(), 3.0);
}

#[test]
fn identity_returns_input_values() {
    let mut g = Graph::new();
    g.input("x", &[2, 3]);
    let t = Tensor::from_vec(&[2, 3], vec![1.5, -2.0, 0.0, 7.25, 1e-300, -0.0]).unwrap();
    assert_eq!(g.forward_eval(&[("x", t.clone())]).unwrap(), t);
}

#[test]
fn sum_of_squares_and_its_gradient() {
    let mut g = Graph::new();
    let x = g.parameter("x", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let sq = g.mul(x, x);
    let s = g.sum(sq);
    assert_eq!(g.forward_eval(&[]).unwrap().item(), 14.0);
    assert_eq!(g.backward(s).unwrap().get("x").unwrap().data(), &[2.0, 4.0, 6.0]);

    let mut g = Graph::new();
    let x = g.parameter("x", Tensor::scalar(3.0));
    let sq = g.mul(x, x);
    g.forward_eval(&[]).unwrap();
    assert_eq!(g.backward(sq).unwrap().get("x").unwrap().item(), 6.0);
}

#[test]
fn linear_loss_gradient_is_the_constant() {
    let c = Tensor::from_vec(&[4], vec![0.5, -1.0, 2.0, 3.5]).unwrap();
    let mut g = Graph::new();
    let x = g.parameter("x", Tensor::from_vec(&[4], vec![9.0, 8.0, 7.0, 6.0]).unwrap());
    let cn = g.constant(c.clone());
    let p = g.mul(cn, x);
    let s = g.sum(p);
    g.forward_eval(&[]).unwrap();
    assert_eq!(g.backward(s).unwrap().get("x").unwrap(), &c);
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = vec![0.3, -1.2, 2.0];
    let mut g = Graph::new();
    let z = g.parameter("z", Tensor::from_vec(&[1, 3], logits.clone()).unwrap());
    let y = g.input("y", &[1]);
    let loss = g.cross_entropy(z, y);
    g.forward_eval(&[("y", Tensor::from_vec(&[1], vec![2.0]).unwrap())])
        .unwrap();
    let grad = g.backward(loss).unwrap().get("z").unwrap().clone();
    let m = logits.iter().copied().fold(f64::MIN, f64::max);
    let denom: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    for k in 0..3 {
        let expect = (logits[k] - m).exp() / denom - if k == 2 { 1.0 } else { 0.0 };
        assert!((grad.data()[k] - expect).abs() < 1e-12);
    }
    let report = grad_check(&mut g, loss, 1e-6, 1e-6, |_| true).unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn quadratic_gradcheck_is_essentially_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let a = g.parameter("a", random(&mut rng, &[5]));
    let b = g.parameter("b", random(&mut rng, &[5]));
    let ab = g.mul(a, b);
    let aa = g.mul(a, a);
    let t = g.add(ab, aa);
    let s = g.sum(t);
    g.forward_eval(&[]).unwrap();
    let report = grad_check(&mut g, s, 1e-5, 1e-8, |_| true).unwrap();
    assert!(report.max_rel_error() < 1e-8, "{}", report.max_rel_error());
}

#[test]
fn scalar_loss_required() {
    let mut g = Graph::new();
    let x = g.parameter("x", Tensor::zeros(&[2]));
    g.forward_eval(&[]).unwrap();
    assert!(g.backward(x).is_err());
}

#[test]
fn shape_errors_name_the_node() {
    let mut g = Graph::new();
    g.set_scope("block7");
    let a = g.parameter("a", Tensor::zeros(&[2]));
    let b = g.parameter("b", Tensor::zeros(&[3]));
    g.add(a, b);
    match g.forward_eval(&[]) {
        Err(Error::Shape { node, .. }) => assert!(node.contains("add") && node.contains("block7"), "{node}"),
        other => panic!("expected shape error, got {other:?}"),
    }
    let mut g = Graph::new();
    g.input("x", &[2, 2]);
    assert!(matches!(
        g.forward_eval(&[("x", Tensor::zeros(&[3]))]),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn non_finite_gradients_are_flagged() {
    let mut g = Graph::new();
    let x = g.parameter("x", Tensor::scalar(f64::INFINITY));
    let y = g.parameter("y", Tensor::scalar(2.0));
    let p = g.mul(x, y);
    g.forward_eval(&[]).unwrap();
    let grads = g.backward(p).unwrap();
    assert_eq!(grads.non_finite, vec!["y".to_string()]);
}

#[test]
fn unreached_parameters_get_zero_gradients() {
    let mut g = Graph::new();
    let x = g.parameter("x", Tensor::scalar(2.0));
    g.parameter("unused", Tensor::zeros(&[3]));
    let sq = g.mul(x, x);
    g.forward_eval(&[]).unwrap();
    let grads = g.backward(sq).unwrap();
    assert_eq!(grads.entries.len(), 2);
    assert_eq!(grads.get("unused").unwrap().data(), &[0.0; 3]);
}

/// A small conv/norm/pool/linear classifier graph with inputs `x` and `labels`.
fn classifier(rng: &mut ChaCha8Rng, batch: usize) -> (Graph, NodeId) {
    let mut g = Graph::new();
    let x = g.input("x", &[batch, 2, 9]);
    let w = g.parameter("conv.w", random(rng, &[3, 2, 3]));
    let h = g.conv1d(x, w, None, 2, 1);
    let scale = g.parameter("bn.scale", Tensor::full(&[3], 1.0));
    let shift = g.parameter("bn.shift", random(rng, &[3]));
    let h = g.batch_norm(h, scale, shift, 1e-5, NormStats::Batch);
    let h = g.relu(h);
    let avg = g.adaptive_pool(h, PoolKind::Avg);
    let max = g.adaptive_pool(h, PoolKind::Max);
    let f = g.concat(avg, max);
    let fw = g.parameter("fc.w", random(rng, &[4, 6]));
    let fb = g.parameter("fc.b", random(rng, &[4]));
    let logits = g.linear(f, fw, fb);
    let labels = g.input("labels", &[batch]);
    let loss = g.cross_entropy(logits, labels);
    (g, loss)
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut g, _) = classifier(&mut rng, 3);
    let x = random(&mut rng, &[3, 2, 9]);
    let y = Tensor::from_vec(&[3], vec![0.0, 3.0, 1.0]).unwrap();
    let a = g.forward_eval(&[("x", x.clone()), ("labels", y.clone())]).unwrap();
    let b = g.forward_eval(&[("x", x), ("labels", y)]).unwrap();
    assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
}

#[test]
fn gradient_of_batch_sum_is_sum_of_sample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random(&mut rng, &[3, 2, 3]);
    let xs = random(&mut rng, &[3, 2, 7]);
    let build = |batch: usize| {
        let mut g = Graph::new();
        let x = g.input("x", &[batch, 2, 7]);
        let wn = g.parameter("w", w.clone());
        let h = g.conv1d(x, wn, None, 1, 1);
        let h = g.mul(h, h);
        let s = g.sum(h);
        (g, s)
    };
    let (mut full, s) = build(3);
    full.forward_eval(&[("x", xs.clone())]).unwrap();
    let total = full.backward(s).unwrap().get("w").unwrap().clone();
    let mut acc = vec![0.0; total.numel()];
    for b in 0..3 {
        let (mut one, s) = build(1);
        let sample = Tensor::from_vec(&[1, 2, 7], xs.data()[b * 14..(b + 1) * 14].to_vec()).unwrap();
        one.forward_eval(&[("x", sample)]).unwrap();
        for (a, v) in acc.iter_mut().zip(one.backward(s).unwrap().get("w").unwrap().data()) {
            *a += v;
        }
    }
    for (a, b) in acc.iter().zip(total.data()) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
    }
}

#[test]
fn spectral_pipeline_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = Graph::new();
    let x = g.parameter("x", random(&mut rng, &[2, 3, 12]));
    let wr = g.parameter("w_re", random(&mut rng, &[3, 12]));
    let wi = g.parameter("w_im", random(&mut rng, &[3, 12]));
    let w = g.complex_from_parts(wr, wi);
    let s = g.dft(x);
    let s = g.complex_mul(w, s);
    let t = g.idft(s);
    let r = g.real_part(t);
    let c = g.constant(random(&mut rng, &[2, 3, 12]));
    let r = g.mul(r, c);
    let loss = g.sum(r);
    g.forward_eval(&[]).unwrap();
    let report = grad_check(&mut g, loss, 1e-6, 1e-4, |_| true).unwrap();
    assert!(report.passed(), "{:?}", report.worst(3));
}

#[test]
fn classifier_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut g, loss) = classifier(&mut rng, 4);
    let x = random(&mut rng, &[4, 2, 9]);
    let y = Tensor::from_vec(&[4], vec![0.0, 3.0, 1.0, 2.0]).unwrap();
    g.forward_eval(&[("x", x), ("labels", y)]).unwrap();
    let report = grad_check(&mut g, loss, 1e-6, 1e-4, |_| true).unwrap();
    assert!(report.passed(), "{:?}", report.worst(3));
}

#[test]
fn epsilon_range_enforced() {
    let mut g = Graph::new();
    let x = g.parameter("x", Tensor::scalar(1.0));
    g.forward_eval(&[]).unwrap();
    assert!(grad_check(&mut g, x, 1e-3, 1e-4, |_| true).is_err());
    assert!(grad_check(&mut g, x, 1e-8, 1e-4, |_| true).is_err());
}

#[derive(Debug, Clone)]
enum Step {
    Add,
    Mul,
    Scale(f64),
    Relu,
    Softmax,
    Spectral,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        Just(Step::Add),
        Just(Step::Mul),
        (-2.0..2.0f64).prop_map(Step::Scale),
        Just(Step::Relu),
        Just(Step::Softmax),
        Just(Step::Spectral),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_graphs_match_finite_differences(steps in prop::collection::vec(step(), 1..6), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let a = g.parameter("a", random(&mut rng, &[2, 5]));
        let b = g.parameter("b", random(&mut rng, &[2, 5]));
        let phi = g.parameter("phi", Tensor::scalar(rng.random_range(0.1..0.9)));
        let gamma = g.parameter("gamma", Tensor::scalar(rng.random_range(0.2..3.0)));
        let mut h = a;
        let mut relu_inputs = Vec::new();
        for s in &steps {
            h = match s {
                Step::Add => g.add(h, b),
                Step::Mul => g.mul(h, b),
                Step::Scale(f) => g.scale(h, *f),
                Step::Relu => {
                    relu_inputs.push(h);
                    g.relu(h)
                }
                Step::Softmax => g.softmax(h),
                Step::Spectral => {
                    let s = g.dft(h);
                    let m = g.soft_mask(phi, gamma, 5, MaskSide::Low, MaskIndexMode::Symmetric);
                    let s = g.mask_mul(m, s);
                    let t = g.idft(s);
                    g.real_part(t)
                }
            };
        }
        let c = g.constant(random(&mut rng, &[2, 5]));
        let h = g.mul(h, c);
        let loss = g.sum(h);
        g.forward_eval(&[]).unwrap();
        // Central differences straddling a ReLU kink are not derivatives.
        for id in &relu_inputs {
            prop_assume!(g.value(*id).unwrap().data().iter().all(|v| v.abs() > 1e-3));
        }
        let report = grad_check(&mut g, loss, 1e-6, 1e-4, |_| true).unwrap();
        prop_assert!(report.passed(), "{:?}", report.worst(2));
    }
}
