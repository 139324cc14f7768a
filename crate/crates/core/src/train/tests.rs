use super::*;
use crate::data::{stratified_split, synth_generate, SynthSpec};
use crate::model::{build_model, ModelConfig};

fn tiny_data(n_per_class: usize, seed: u64) -> EcgDataset {
    let ds = synth_generate(&SynthSpec {
        n_per_class,
        n_classes: 3,
        n_leads: 12,
        length: 64,
        noise_std: 0.05,
        seed,
    })
    .unwrap();
    stratified_split(&ds, [0.8, 0.1, 0.1], seed).unwrap()
}

fn quick(epochs: usize, lr: f64) -> Hyperparams {
    Hyperparams {
        epochs,
        batch_size: 8,
        lr,
        lr_drop_epoch: epochs,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn default_schedule() {
    let h = Hyperparams::default();
    assert_eq!(h.lr_at(0), 1e-4);
    assert_eq!(h.lr_at(19), 1e-4);
    assert!((h.lr_at(20) - 1e-5).abs() < 1e-20);
    assert!((h.lr_at(49) - 1e-5).abs() < 1e-20);
    assert!(h.echo().contains("epochs=50 batch=32 lr=1e-4 wd=2e-5"));
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let h = Hyperparams {
        epochs: 10,
        lr_drop_epoch: 20,
        ..Default::default()
    };
    assert!(h.validate().is_err());
    assert!(Hyperparams {
        lr: 0.0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(Hyperparams {
        batch_size: 0,
        ..Default::default()
    }
    .validate()
    .is_err());
    let mut h = Hyperparams::default();
    assert!(h.apply("epochs", "7").unwrap());
    assert!(!h.apply("widths", "1").unwrap());
    assert!(h.apply("epochs", "x").is_err());
    assert_eq!(h.epochs, 7);
}

#[test]
fn training_is_reproducible() {
    let data = tiny_data(4, 1);
    let cfg = ModelConfig::tiny();
    let run = || {
        let mut m = build_model(&cfg, 2).unwrap();
        let trace = train(&mut m, &data, &quick(1, 1e-3)).unwrap();
        (m, trace)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a, b);
    assert_eq!(ta.to_csv(), tb.to_csv());
    assert_ne!(a, build_model(&cfg, 2).unwrap());
}

#[test]
fn trace_layout() {
    let data = tiny_data(4, 2);
    let mut m = build_model(&ModelConfig::tiny(), 0).unwrap();
    let trace = train(&mut m, &data, &quick(3, 1e-3)).unwrap();
    assert_eq!(trace.rows.len(), 3);
    let first = trace.rows[0].blocks[0].unwrap();
    assert_eq!(
        (first.phi, first.gamma, first.lambda_low, first.lambda_high),
        (0.4, 0.5, 0.0, 0.0)
    );
    assert!(trace.rows[0].blocks[2].is_none());
    assert_ne!(trace.rows[2].blocks[0], trace.rows[0].blocks[0]);
    let csv = trace.to_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,loss,lr,phi1,phi2,phi3,phi4,gamma1,gamma2,gamma3,gamma4,lamL1,lamL2,lamL3,lamL4,lamH1,lamH2,lamH3,lamH4"
    );
    assert!(lines.all(|l| l.split(',').count() == 19));
}

#[test]
fn overfits_a_small_batch() {
    let data = tiny_data(2, 4);
    let mut m = build_model(&ModelConfig::tiny(), 4).unwrap();
    let trace = train(&mut m, &data, &quick(40, 1e-2)).unwrap();
    let first = trace.rows[0].loss;
    let last = trace.rows.last().unwrap().loss;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn loss_falls_on_synthetic_data() {
    let data = tiny_data(12, 5);
    let mut m = build_model(&ModelConfig::tiny(), 5).unwrap();
    let trace = train(&mut m, &data, &quick(6, 3e-3)).unwrap();
    assert!(trace.rows[5].loss < trace.rows[0].loss);
    assert!(trace.rows.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn fixed_phi_stays_fixed() {
    let data = tiny_data(4, 6);
    let cfg = ModelConfig {
        fixed_phi: Some(0.25),
        ..ModelConfig::tiny()
    };
    let mut m = build_model(&cfg, 6).unwrap();
    let trace = train(&mut m, &data, &quick(3, 1e-2)).unwrap();
    for row in &trace.rows {
        assert_eq!(row.blocks[0].unwrap().phi, 0.25);
    }
    assert!(m.satse_blocks().all(|b| b.unwrap().phi == 0.25));
}

#[test]
fn bad_datasets_are_rejected() {
    let mut data = tiny_data(4, 7);
    let mut m = build_model(&ModelConfig::tiny(), 0).unwrap();
    for r in &mut data.records {
        if r.split == Split::Train {
            r.split = Split::Val;
        }
    }
    assert!(train(&mut m, &data, &quick(1, 1e-3)).is_err());

    let long = synth_generate(&SynthSpec {
        n_per_class: 3,
        n_classes: 3,
        n_leads: 12,
        length: 128,
        noise_std: 0.0,
        seed: 0,
    })
    .unwrap();
    assert!(train(&mut m, &long, &quick(1, 1e-3)).is_err());
}

#[test]
fn divergence_aborts() {
    let data = tiny_data(4, 8);
    let mut m = build_model(&ModelConfig::tiny(), 0).unwrap();
    let err = train(&mut m, &data, &quick(2, 1e300)).unwrap_err();
    assert!(matches!(err, Error::TrainingAborted { .. }), "{err}");
}

/// Least squares on a single linear layer, driven by `adam_update`.
#[test]
fn adam_on_linear_least_squares() {
    use crate::autodiff::Graph;
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::from_vec(&[16, 3], (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let true_w = [0.7, -1.2, 0.4, 2.0, 0.1, -0.5];
    let mut target = vec![0.0; 32];
    for n in 0..16 {
        for o in 0..2 {
            target[n * 2 + o] = (0..3).map(|i| true_w[o * 3 + i] * x.data()[n * 3 + i]).sum::<f64>() + 0.3;
        }
    }
    let neg_target = Tensor::from_vec(&[16, 2], target.iter().map(|t| -t).collect()).unwrap();

    let mut params = [vec![0.0; 6], vec![0.0; 2]];
    let mut moments = [Moments::default(), Moments::default()];
    let cfg = AdamConfig::default();
    let mut losses = Vec::new();
    for step in 1..=50 {
        let mut g = Graph::new();
        let xi = g.input("x", &[16, 3]);
        let w = g.parameter("w", Tensor::from_vec(&[2, 3], params[0].clone()).unwrap());
        let b = g.parameter("b", Tensor::from_vec(&[2], params[1].clone()).unwrap());
        let y = g.linear(xi, w, b);
        let t = g.constant(neg_target.clone());
        let r = g.add(y, t);
        let sq = g.mul(r, r);
        let s = g.sum(sq);
        let loss = g.scale(s, 1.0 / 32.0);
        losses.push(g.forward_eval(&[("x", x.clone())]).unwrap().item());
        let grads = g.backward(loss).unwrap();
        for (k, name) in ["w", "b"].iter().enumerate() {
            adam_update(
                &mut params[k],
                grads.get(name).unwrap().data(),
                &mut moments[k],
                step,
                1e-2,
                0.0,
                &cfg,
            );
        }
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}
