use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{decode_model, encode_model};
use super::*;

fn batch(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn head_width_for_default_resnet18() {
    let cfg = ModelConfig {
        input_length: 256,
        ..Default::default()
    };
    let model = build_model(&cfg, 0).unwrap();
    assert_eq!(model.head_width(), 1024);
    assert_eq!(model.head.n_out(), 5);
}

#[test]
fn stage_channels_follow_the_backbone() {
    let widths = vec![64, 128, 256, 512];
    for (backbone, expect) in [
        (Backbone::Resnet18, [64, 128, 256, 512]),
        (Backbone::Resnet34, [64, 128, 256, 512]),
        (Backbone::Resnet50, [256, 512, 1024, 2048]),
    ] {
        let cfg = ModelConfig {
            backbone,
            widths: widths.clone(),
            input_length: 128,
            ..Default::default()
        };
        let model = build_model(&cfg, 0).unwrap();
        let got: Vec<usize> = model.stages.iter().map(|s| s.out_channels).collect();
        assert_eq!(got, expect);
        let units: Vec<usize> = model.stages.iter().map(|s| s.units.len()).collect();
        assert_eq!(units, backbone.units_per_stage().to_vec());
    }
}

#[test]
fn stride_plan() {
    let model = build_model(&ModelConfig::reduced(3), 0).unwrap();
    assert_eq!(model.stage_lengths(512).unwrap(), vec![128, 64, 32, 16]);
    let blocks: Vec<(usize, usize)> = model
        .satse_blocks()
        .map(|b| b.map(|p| (p.channels(), p.len())).unwrap())
        .collect();
    assert_eq!(blocks, vec![(16, 128), (32, 64), (64, 32), (128, 16)]);
}

#[test]
fn same_seed_same_parameters() {
    let cfg = ModelConfig::tiny();
    let a = build_model(&cfg, 11).unwrap();
    assert_eq!(a, build_model(&cfg, 11).unwrap());
    assert_ne!(a.parameters(), build_model(&cfg, 12).unwrap().parameters());
}

#[test]
fn tiny_forward_shape() {
    let cfg = ModelConfig {
        input_length: 512,
        ..ModelConfig::tiny()
    };
    let model = build_model(&cfg, 1).unwrap();
    let logits = model.predict(&batch(1, &[2, 12, 512])).unwrap();
    assert_eq!(logits.shape(), &[2, 3]);
    assert!(logits.is_finite());
}

#[test]
fn disabled_satse_equals_plain_backbone() {
    let with = build_model(&ModelConfig::tiny(), 3).unwrap();
    let without = build_model(&ModelConfig::tiny().with_satse_count(0), 3).unwrap();
    let x = batch(2, &[2, 12, 64]);
    let a = with.predict(&x).unwrap();
    let b = without.predict(&x).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert_eq!(u.to_bits(), v.to_bits());
    }
    let mut with = with;
    let mut without = without;
    let ta = model_forward(&mut with, &x, Mode::Train).unwrap();
    let tb = model_forward(&mut without, &x, Mode::Train).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn satse_parameter_delta() {
    let cfg = ModelConfig::reduced(3);
    let none = build_model(&cfg.clone().with_satse_count(0), 0)
        .unwrap()
        .parameter_count();
    let mut expected = none;
    for n in 1..=4 {
        let model = build_model(&cfg.clone().with_satse_count(n), 0).unwrap();
        let p = model.stages[n - 1].satse.as_ref().unwrap();
        expected += 2 * p.channels() * p.len() + 4;
        assert_eq!(model.parameter_count(), expected);
    }
}

#[test]
fn amplitude_matters() {
    let model = build_model(&ModelConfig::tiny(), 4).unwrap();
    let x = batch(4, &[2, 12, 64]);
    let a = model.predict(&x).unwrap();
    let b = model.predict(&x.map(|v| 2.0 * v)).unwrap();
    assert!(a.max_abs_diff(&b) > 1e-9);
}

#[test]
fn eval_forward_is_pure() {
    let mut model = build_model(&ModelConfig::tiny(), 5).unwrap();
    let x = batch(5, &[3, 12, 64]);
    let a = model_forward(&mut model, &x, Mode::Eval).unwrap();
    let b = model_forward(&mut model, &x, Mode::Eval).unwrap();
    assert_eq!(a, b);
    let before = model.buffers();
    model_forward(&mut model, &x, Mode::Train).unwrap();
    assert_ne!(model.buffers(), before);
}

#[test]
fn wrong_lead_count_is_a_shape_error() {
    let model = build_model(&ModelConfig::tiny(), 0).unwrap();
    assert!(matches!(
        model.predict(&batch(0, &[2, 8, 64])),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn parameter_names_are_unique() {
    let model = build_model(&ModelConfig::reduced(3), 0).unwrap();
    let names: Vec<String> = model.parameters().into_iter().map(|p| p.name).collect();
    let set: std::collections::BTreeSet<_> = names.iter().collect();
    assert_eq!(set.len(), names.len());
    assert!(names.contains(&"satse3.weight_im".to_string()));
    let mut visited = Vec::new();
    build_model(&ModelConfig::reduced(3), 0)
        .unwrap()
        .visit_parameters_mut(|n, _| visited.push(n.to_string()));
    assert_eq!(visited, names);
}

#[test]
fn fixed_phi_is_not_trainable() {
    let cfg = ModelConfig {
        fixed_phi: Some(0.2),
        ..ModelConfig::tiny()
    };
    let model = build_model(&cfg, 0).unwrap();
    assert!(model.satse_blocks().all(|b| b.unwrap().phi == 0.2));
    let phi = model.parameters().into_iter().find(|p| p.name == "satse1.phi").unwrap();
    assert!(!phi.trainable);
    let mg = model.build_graph(2, 64, Mode::Train, true).unwrap();
    assert!(mg.graph.parameter_names().all(|n| !n.ends_with(".phi")));
}

#[test]
fn save_load_is_bitwise() {
    let mut model = build_model(&ModelConfig::tiny(), 6).unwrap();
    perturb_satse(&mut model, 6);
    let x = batch(6, &[2, 12, 64]);
    model_forward(&mut model, &x, Mode::Train).unwrap();
    let bytes = encode_model(&model).unwrap();
    let back = decode_model(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(encode_model(&back).unwrap(), bytes);
    let a = model.predict(&x).unwrap();
    let b = back.predict(&x).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.scdn");
    save_model(&model, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
}

#[test]
fn corrupted_model_files_are_rejected() {
    let bytes = encode_model(&build_model(&ModelConfig::tiny(), 0).unwrap()).unwrap();
    for cut in [0, 3, 5, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(decode_model(&bytes[..cut]), Err(Error::Format { .. })),
            "cut at {cut}"
        );
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_model(&bad).is_err());
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(decode_model(&bad).is_err());
    let mut extra = bytes;
    extra.push(1);
    assert!(decode_model(&extra).is_err());
}

#[test]
fn full_model_gradcheck_on_tiny_config() {
    let mut model = build_model(&ModelConfig::tiny(), 7).unwrap();
    perturb_satse(&mut model, 7);
    let report = check_model_gradients(&model, 2, 7, 1e-5, 1e-4, |_| true).unwrap();
    assert!(report.passed(), "{:?}", report.worst(3));
    assert!(report.entries.contains_key("satse2.gamma"));
}

#[test]
fn real32_is_reported_unsupported() {
    let cfg = ModelConfig {
        precision: Precision::Real32,
        ..ModelConfig::tiny()
    };
    assert!(matches!(build_model(&cfg, 0), Err(Error::Unsupported(_))));
}
