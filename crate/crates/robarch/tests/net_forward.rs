//! Network realization tests: canonical parameter enumeration, deterministic
//! initialization, forward/backward correctness, and mode semantics.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use robarch::config::{preset, preset_names};
use robarch::net::{argmax_rows, Mode, Network};
use robarch::tensor::{ConvSpec, Graph, Tensor};
use robarch::{count_params, parse_config, ArchConfig};

fn tiny_config(extra_stage_fields: &str) -> ArchConfig {
    let doc = format!(
        r#"{{
            "name": "tiny",
            "num_classes": 4,
            "input_channels": 3,
            "stem": {{"kind": "conv_maxpool", "width": 8, "kernel": 3}},
            "stages": [
                {{"depth": 1, "width": 8{extra_stage_fields}}},
                {{"depth": 1, "width": 16{extra_stage_fields}}},
                {{"depth": 1, "width": 32{extra_stage_fields}}},
                {{"depth": 1, "width": 64{extra_stage_fields}}}
            ]
        }}"#
    );
    parse_config(&doc).expect("tiny config parses")
}

fn rand_batch<T: robarch::tensor::Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::rand_uniform(shape.to_vec(), 0.0, 1.0, &mut rng)
}

#[test]
fn every_preset_matches_the_analyzer_param_count() {
    for name in preset_names() {
        let cfg = preset(name).expect("preset");
        let net = Network::<f32>::instantiate(&cfg, 3);
        let expected = count_params(&cfg).total;
        assert_eq!(
            net.total_param_elements(),
            expected,
            "{name}: instantiated element count disagrees with the analyzer"
        );
    }
}

#[test]
fn resnet50_parameter_inventory() {
    let cfg = preset("resnet50").unwrap();
    let net = Network::<f32>::instantiate(&cfg, 0);
    assert_eq!(net.params().len(), 161, "parameter tensor count");
    assert_eq!(net.total_param_elements(), 25_557_032);

    let shape = |name: &str| net.param(name).unwrap_or_else(|| panic!("{name}")).shape().to_vec();
    assert_eq!(shape("stem.conv.weight"), [64, 3, 7, 7]);
    assert_eq!(shape("stem.norm.weight"), [64]);
    assert_eq!(shape("s1.b1.conv1.weight"), [64, 64, 1, 1]);
    assert_eq!(shape("s1.b1.conv2.weight"), [64, 64, 3, 3]);
    assert_eq!(shape("s1.b1.conv3.weight"), [256, 64, 1, 1]);
    assert_eq!(shape("s1.b1.proj.conv.weight"), [256, 64, 1, 1]);
    assert_eq!(shape("s1.b1.proj.norm.bias"), [256]);
    assert_eq!(shape("s2.b1.conv2.weight"), [128, 128, 3, 3]);
    assert_eq!(shape("s4.b3.conv3.weight"), [2048, 512, 1, 1]);
    assert_eq!(shape("head.fc.weight"), [1000, 2048]);
    assert_eq!(shape("head.fc.bias"), [1000]);

    // Exactly the four stage-opening blocks carry projections.
    let projections: Vec<&str> = net
        .params()
        .iter()
        .filter(|p| p.name.contains(".proj.conv"))
        .map(|p| p.name.as_str())
        .collect();
    assert_eq!(
        projections,
        [
            "s1.b1.proj.conv.weight",
            "s2.b1.proj.conv.weight",
            "s3.b1.proj.conv.weight",
            "s4.b1.proj.conv.weight"
        ]
    );
}

#[test]
fn instantiation_is_deterministic_in_the_seed() {
    let cfg = tiny_config("");
    let a = Network::<f32>::instantiate(&cfg, 42);
    let b = Network::<f32>::instantiate(&cfg, 42);
    let c = Network::<f32>::instantiate(&cfg, 43);
    for (pa, pb) in a.params().iter().zip(b.params()) {
        assert_eq!(pa.name, pb.name);
        assert_eq!(pa.tensor, pb.tensor, "{}", pa.name);
    }
    let differs = a
        .params()
        .iter()
        .zip(c.params())
        .any(|(pa, pc)| pa.tensor != pc.tensor);
    assert!(differs, "different seeds must give different weights");
}

#[test]
fn initialization_follows_the_documented_rules() {
    let cfg = preset("resnet50").unwrap();
    let net = Network::<f64>::instantiate(&cfg, 11);

    // Fan-out rule: s1.b1.conv2 is 3x3, 64 -> 64, groups 1, so the draw std
    // is sqrt(2 / (9 * 64)). With 36,864 samples the sample std should land
    // within a few percent and the mean near zero.
    let w = net.param("s1.b1.conv2.weight").unwrap();
    let expected_std = (2.0f64 / (9.0 * 64.0)).sqrt();
    let n = w.numel() as f64;
    let mean: f64 = w.data().iter().sum::<f64>() / n;
    let var: f64 = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    assert!(mean.abs() < 3.0 * expected_std / n.sqrt() * 4.0, "mean {mean}");
    assert!(
        (var.sqrt() - expected_std).abs() / expected_std < 0.05,
        "sample std {} vs expected {expected_std}",
        var.sqrt()
    );

    // Norm affine pairs start at identity; the head bias starts at zero.
    assert!(net.param("s3.b2.norm1.weight").unwrap().data().iter().all(|&v| v == 1.0));
    assert!(net.param("s3.b2.norm1.bias").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(net.param("head.fc.bias").unwrap().data().iter().all(|&v| v == 0.0));

    // Fresh running statistics are (mean 0, var 1).
    for r in net.running_stats() {
        assert!(r.mean.data().iter().all(|&v| v == 0.0), "{}", r.name);
        assert!(r.var.data().iter().all(|&v| v == 1.0), "{}", r.name);
    }

    // Parametric activation scalars start at 1 (shift scalar at 0).
    let prelu_net = Network::<f64>::instantiate(
        &tiny_config(r#", "activation": {"kind": "prelu"}"#),
        0,
    );
    assert_eq!(prelu_net.param("s1.b1.act1.weight").unwrap().data(), [1.0]);
    let pssilu_net = Network::<f64>::instantiate(
        &tiny_config(r#", "activation": {"kind": "pssilu"}"#),
        0,
    );
    assert_eq!(pssilu_net.param("s2.b1.act3.weight").unwrap().data(), [1.0, 0.0]);
}

#[test]
fn tiny_forward_has_the_contract_shape() {
    let cfg = tiny_config("");
    let mut net = Network::<f32>::instantiate(&cfg, 5);
    let x = rand_batch::<f32>(&[2, 3, 32, 32], 9);
    let logits = net.forward(&x).expect("forward");
    assert_eq!(logits.shape(), [2, 4]);
    assert!(logits.all_finite());
}

#[test]
fn zero_input_at_init_gives_zero_logits() {
    // With zero input, identity batch-norm eval stats, and zero head bias,
    // every layer maps zero to zero, so the logits are exactly zero.
    let cfg = preset("resnet50").unwrap();
    let mut net = Network::<f32>::instantiate(&cfg, 1);
    let x = Tensor::<f32>::zeros(vec![1, 3, 32, 32]);
    let logits = net.forward(&x).expect("forward");
    assert_eq!(logits.shape(), [1, 1000]);
    assert!(logits.data().iter().all(|&v| v == 0.0));
}

#[test]
fn eval_forward_is_pure() {
    let cfg = tiny_config("");
    let mut net = Network::<f64>::instantiate(&cfg, 5);
    let x = rand_batch::<f64>(&[3, 3, 32, 32], 2);
    let before: Vec<_> = net
        .running_stats()
        .iter()
        .map(|r| (r.mean.clone(), r.var.clone()))
        .collect();
    let a = net.forward(&x).unwrap();
    let b = net.forward(&x).unwrap();
    assert_eq!(a, b, "repeated eval forwards must be bit-identical");
    for (r, (m, v)) in net.running_stats().iter().zip(&before) {
        assert_eq!(&r.mean, m, "{} mean moved in eval mode", r.name);
        assert_eq!(&r.var, v, "{} var moved in eval mode", r.name);
    }
}

#[test]
fn train_mode_updates_running_stats_with_momentum() {
    let cfg = tiny_config("");
    let mut net = Network::<f64>::instantiate(&cfg, 5);
    let x = rand_batch::<f64>(&[2, 3, 32, 32], 3);

    // Independent oracle for the stem statistics: run the stem convolution
    // directly on the same weights and take per-channel batch moments.
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let wv = g.leaf(net.param("stem.conv.weight").unwrap().clone());
    let spec = ConvSpec {
        stride: 2,
        padding: 1,
        dilation: 1,
        groups: 1,
    };
    let conv = g.conv2d(xv, wv, &spec);
    let y = g.value(conv);
    let (b, c, h, w) = (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]);
    let hw = h * w;
    let m = (b * hw) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for bi in 0..b {
        for ci in 0..c {
            for s in 0..hw {
                mean[ci] += y.data()[(bi * c + ci) * hw + s];
            }
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    for bi in 0..b {
        for ci in 0..c {
            for s in 0..hw {
                let d = y.data()[(bi * c + ci) * hw + s] - mean[ci];
                var[ci] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= m - 1.0; // running estimates use the unbiased variance
    }

    net.set_mode(Mode::Train);
    net.forward(&x).unwrap();
    let stem = net
        .running_stats()
        .iter()
        .find(|r| r.name == "stem.norm")
        .expect("stem norm stats");
    for ci in 0..c {
        let want_mean = 0.9 * 0.0 + 0.1 * mean[ci];
        let want_var = 0.9 * 1.0 + 0.1 * var[ci];
        assert!(
            (stem.mean.data()[ci] - want_mean).abs() < 1e-9,
            "channel {ci} mean {} vs {want_mean}",
            stem.mean.data()[ci]
        );
        assert!(
            (stem.var.data()[ci] - want_var).abs() < 1e-9,
            "channel {ci} var {} vs {want_var}",
            stem.var.data()[ci]
        );
    }
}

#[test]
fn backward_reaches_every_parameter() {
    // A three-stage config exercising SE, parametric activations of both
    // arities, and projection shortcuts; every parameter should receive a
    // nonzero gradient from a generic batch.
    let doc = r#"{
        "name": "probe",
        "num_classes": 3,
        "input_channels": 3,
        "stem": {"kind": "conv_maxpool", "width": 8, "kernel": 3},
        "stages": [
            {"depth": 1, "width": 8, "activation": {"kind": "prelu"},
             "se": {"enabled": true}},
            {"depth": 1, "width": 16, "activation": {"kind": "pssilu"}},
            {"depth": 2, "width": 32, "activation": {"kind": "silu"},
             "se": {"enabled": true}}
        ]
    }"#;
    let cfg = parse_config(doc).unwrap();
    let mut net = Network::<f64>::instantiate(&cfg, 7);
    net.set_mode(Mode::Train);
    let x = rand_batch::<f64>(&[4, 3, 16, 16], 1);
    let out = net.loss_and_grads(&x, &[0, 1, 2, 0]).expect("backward");

    assert_eq!(out.logits.shape(), [4, 3]);
    assert_eq!(out.per_sample.len(), 4);
    assert!(out.loss.is_finite() && out.loss > 0.0);
    assert_eq!(out.input_grad.shape(), x.shape());
    assert!(out.input_grad.all_finite());
    assert!(out.input_grad.data().iter().any(|&v| v != 0.0));

    assert_eq!(out.param_grads.len(), net.params().len());
    for (p, grad) in net.params().iter().zip(&out.param_grads) {
        assert_eq!(grad.shape(), p.tensor.shape(), "{} gradient shape", p.name);
        assert!(grad.all_finite(), "{} gradient finite", p.name);
        assert!(
            grad.data().iter().any(|&v| v != 0.0),
            "{} received no gradient",
            p.name
        );
    }
}

#[test]
fn end_to_end_input_gradient_matches_finite_differences() {
    let cfg = tiny_config("");
    let mut net = Network::<f64>::instantiate(&cfg, 13);
    net.set_mode(Mode::Eval);
    let x = rand_batch::<f64>(&[2, 3, 32, 32], 21);
    let labels = [1usize, 3];
    let analytic = net.loss_and_grads(&x, &labels).unwrap().input_grad;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..24 {
        let e = rng.gen_range(0..x.numel());
        let x0 = x.data()[e];
        let h = 1e-5 * x0.abs().max(1.0);
        let mut probe = x.clone();
        probe.data_mut()[e] = x0 + h;
        let fp = net.loss_and_grads(&probe, &labels).unwrap().loss;
        probe.data_mut()[e] = x0 - h;
        let fm = net.loss_and_grads(&probe, &labels).unwrap().loss;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[e];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "worst relative error {worst:.3e}");
}

#[test]
fn dense_connectivity_variants_run_and_match_the_analyzer() {
    for extra in [
        r#", "dense_ratio": 2"#,
        r#", "dense_ratio": 2, "dense_mode": "concat""#,
        r#", "dense_ratio": 3, "dense_mode": "concat""#,
    ] {
        let doc = format!(
            r#"{{
                "name": "dense-tiny",
                "num_classes": 4,
                "input_channels": 3,
                "stem": {{"kind": "conv_maxpool", "width": 8, "kernel": 3}},
                "stages": [
                    {{"depth": 4, "width": 8{extra}}},
                    {{"depth": 3, "width": 16{extra_capped}}},
                    {{"depth": 4, "width": 32{extra}}}
                ]
            }}"#,
            extra = extra,
            extra_capped = extra.replace("dense_ratio\": 3", "dense_ratio\": 2"),
        );
        let cfg = parse_config(&doc).unwrap();
        let mut net = Network::<f32>::instantiate(&cfg, 2);
        assert_eq!(
            net.total_param_elements(),
            count_params(&cfg).total,
            "dense variant {extra:?}"
        );
        let x = rand_batch::<f32>(&[2, 3, 16, 16], 4);
        let logits = net.forward(&x).unwrap();
        assert_eq!(logits.shape(), [2, 4]);
        assert!(logits.all_finite());
    }
}

#[test]
fn shape_and_label_errors_are_reported() {
    let cfg = tiny_config("");
    let mut net = Network::<f32>::instantiate(&cfg, 0);

    let bad_rank = Tensor::<f32>::zeros(vec![3, 32, 32]);
    assert!(net.forward(&bad_rank).is_err(), "rank-3 input");

    let bad_channels = Tensor::<f32>::zeros(vec![1, 4, 32, 32]);
    assert!(net.forward(&bad_channels).is_err(), "channel mismatch");

    let bad_res = Tensor::<f32>::zeros(vec![1, 3, 30, 30]);
    assert!(net.forward(&bad_res).is_err(), "resolution not divisible");

    let x = Tensor::<f32>::zeros(vec![2, 3, 32, 32]);
    assert!(net.loss_and_grads(&x, &[0]).is_err(), "label count");
    assert!(net.loss_and_grads(&x, &[0, 9]).is_err(), "label range");
}

#[test]
fn se_gate_is_bounded_and_argmax_breaks_ties_low() {
    // The gate is the sigmoid of the excitation MLP; with the instantiated
    // weights it stays strictly inside (0, 1) and gating preserves shape.
    let cfg = parse_config(
        r#"{
            "name": "se-probe",
            "num_classes": 4,
            "input_channels": 3,
            "stem": {"kind": "conv_maxpool", "width": 8, "kernel": 3},
            "stages": [
                {"depth": 1, "width": 8, "se": {"enabled": true}},
                {"depth": 1, "width": 16, "se": {"enabled": true}},
                {"depth": 1, "width": 32, "se": {"enabled": true}}
            ]
        }"#,
    )
    .unwrap();
    let net = Network::<f64>::instantiate(&cfg, 19);
    let w1 = net.param("s1.b1.se.fc1.weight").unwrap().clone();
    let b1 = net.param("s1.b1.se.fc1.bias").unwrap().clone();
    let w2 = net.param("s1.b1.se.fc2.weight").unwrap().clone();
    let b2 = net.param("s1.b1.se.fc2.bias").unwrap().clone();
    let c = w1.shape()[1];

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let x = Tensor::<f64>::rand_uniform(vec![2, c, 4, 4], -3.0, 3.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let (w1v, b1v) = (g.leaf(w1.clone()), g.leaf(b1.clone()));
        let (w2v, b2v) = (g.leaf(w2.clone()), g.leaf(b2.clone()));
        let pooled = g.global_avg_pool(xv);
        let h = g.linear(pooled, w1v, Some(b1v));
        let h = g.relu(h);
        let h = g.linear(h, w2v, Some(b2v));
        let gate = g.sigmoid(h);
        assert!(
            g.value(gate).data().iter().all(|&v| v > 0.0 && v < 1.0),
            "gate escaped (0,1)"
        );
        let scaled = g.scale_channels(xv, gate);
        assert_eq!(g.value(scaled).shape(), x.shape());
    }

    let logits = Tensor::<f64>::new(vec![2, 3], vec![0.5, 0.5, 0.1, -1.0, 2.0, 2.0]);
    assert_eq!(argmax_rows(&logits), [0, 1]);
}
