mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use slimkit::bench::{build_toydet, ToyDetConfig};
use slimkit::graph::fixtures::{randomize_bn, yolov5s_like, YoloLikeConfig};
use slimkit::graph::infer_shapes;
use slimkit::runtime::kernels::{self, Mode};
use slimkit::runtime::{infer, layer_forward, sgd_step, BnParams, ConvAttrs, ConvParams, OptState, Tape};
use slimkit::{Op, Tensor4};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_loop_oracle(
        seed in any::<u64>(),
        n in 1usize..3, cin in 1usize..5, cout in 1usize..5,
        h in 3usize..9, w in 3usize..9,
        k in prop::sample::select(vec![1usize, 3]),
        stride in 1usize..3, bias in any::<bool>(),
    ) {
        let mut g = rng(seed);
        let pad = g.gen_range(0..=k / 2);
        let a = ConvAttrs::new(cin, cout, k, stride, pad, bias);
        let x = rand_tensor(&mut g, [n, cin, h, w], -1.0, 1.0);
        let p = ConvParams {
            weight: rand_vec(&mut g, a.weight_len(), -1.0, 1.0),
            bias: bias.then(|| rand_vec(&mut g, cout, -1.0, 1.0)),
        };
        let fast = kernels::conv2d_forward(&x, &a, &p, "c").unwrap();
        let slow = naive_conv(&x, &a, &p);
        prop_assert_eq!(fast.dims(), slow.dims());
        prop_assert!(fast.max_abs_diff(&slow) <= 1e-12);
    }

    #[test]
    fn activations_preserve_zero_channels(seed in any::<u64>(), c in 1usize..4) {
        let mut g = rng(seed);
        let mut x = rand_tensor(&mut g, [2, c, 3, 3], -2.0, 2.0);
        let zero = g.gen_range(0..c);
        for n in 0..2 {
            x.channel_mut(n, zero).fill(0.0);
        }
        for y in [kernels::silu_forward(&x), kernels::relu_forward(&x)] {
            for n in 0..2 {
                prop_assert!(y.channel(n, zero).iter().all(|v| *v == 0.0));
            }
        }
    }
}

#[test]
fn conv_random_2x3x8x8_matches_oracle() {
    let mut g = rng(11);
    let a = ConvAttrs::new(3, 4, 3, 1, 1, true);
    let x = rand_tensor(&mut g, [2, 3, 8, 8], -1.0, 1.0);
    let p = ConvParams {
        weight: rand_vec(&mut g, a.weight_len(), -1.0, 1.0),
        bias: Some(rand_vec(&mut g, 4, -1.0, 1.0)),
    };
    let y = kernels::conv2d_forward(&x, &a, &p, "c").unwrap();
    assert!(y.max_abs_diff(&naive_conv(&x, &a, &p)) <= 1e-12);
}

#[test]
fn bn_train_normalizes_each_channel() {
    let mut g = rng(12);
    let x = rand_tensor(&mut g, [4, 3, 5, 5], -3.0, 5.0);
    let p = BnParams::identity(3);
    // a tiny eps makes the normalized variance 1 to well below 1e-9
    let (y, _) = kernels::batchnorm_forward(&x, &p, 1e-14, Mode::Train, "bn").unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|n| y.channel(n, c).to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-9, "mean {m}");
        assert!((v - 1.0).abs() < 1e-9, "var {v}");
    }
}

#[test]
fn bn_gamma_grad_of_sum_is_sum_of_normalized_inputs() {
    let mut g = rng(13);
    let x = rand_tensor(&mut g, [3, 2, 4, 4], -1.0, 2.0);
    let mut p = BnParams::identity(2);
    p.gamma = vec![0.7, 1.3];
    p.beta = vec![0.1, -0.2];
    p.running_mean = vec![0.4, -0.1];
    p.running_var = vec![0.8, 1.7];
    let eps = kernels::BN_EPS;
    for mode in [Mode::Inference, Mode::Train] {
        let (y, cache) = kernels::batchnorm_forward(&x, &p, eps, mode, "bn").unwrap();
        let ones = Tensor4::filled(y.dims(), 1.0);
        let back = kernels::batchnorm_backward(&p, &cache, &ones);
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| x.channel(n, c).to_vec()).collect();
            let (mean, var) = match mode {
                Mode::Inference => (p.running_mean[c], p.running_var[c]),
                Mode::Train => {
                    let m = vals.iter().sum::<f64>() / vals.len() as f64;
                    (m, vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64)
                }
            };
            let expect: f64 = vals.iter().map(|v| (v - mean) / (var + eps).sqrt()).sum();
            assert!((back.gamma[c] - expect).abs() < 1e-9, "{mode:?} {c}: {} vs {expect}", back.gamma[c]);
        }
    }
}

#[test]
fn layer_examples() {
    let z = Tensor4::zeros([1, 1, 1, 1]);
    assert_eq!(layer_forward(&Op::Silu, &[&z], "s").unwrap().data(), &[0.0]);
    let a = Tensor4::zeros([1, 2, 4, 4]);
    let b = Tensor4::zeros([1, 3, 4, 4]);
    assert_eq!(layer_forward(&Op::Concat, &[&a, &b], "c").unwrap().dims(), [1, 5, 4, 4]);
    let q = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let m = layer_forward(&Op::MaxPool(Default::default()), &[&q], "p").unwrap();
    assert_eq!(m.data(), &[4.0]);
    let u = layer_forward(&Op::UpsampleNearest2, &[&q], "u").unwrap();
    assert_eq!(u.dims(), [1, 1, 4, 4]);
    assert_eq!(u.at(0, 0, 3, 3), 4.0);
    assert!(layer_forward(&Op::Add, &[&a, &b], "add").is_err());
}

/// Every node's runtime output has the inferred shape.
#[test]
fn forward_respects_inferred_shapes() {
    let toy = build_toydet(&ToyDetConfig::default()).unwrap();
    let yolo = yolov5s_like(&YoloLikeConfig::small(vec!["a".into(), "b".into()], 64));
    for model in [toy, yolo] {
        let shapes = infer_shapes(&model).unwrap();
        let mut all = model.clone();
        all.outputs = model.nodes.iter().map(|n| n.id.clone()).collect();
        let [c, h, w] = model.input_shape;
        let outs = infer(&all, &Tensor4::filled([2, c, h, w], 0.5)).unwrap();
        for (id, t) in all.outputs.iter().zip(&outs) {
            let [_, c, h, w] = t.dims();
            assert_eq!(shapes[id], [c, h, w], "{id}");
            assert!(t.is_finite());
        }
    }
}

fn train_step(threads: usize) -> (Vec<Tensor4>, Vec<Vec<f64>>, Vec<u8>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let cfg = ToyDetConfig {
            image_size: 32,
            base_width: 8,
            ..Default::default()
        };
        let mut model = build_toydet(&cfg).unwrap();
        randomize_bn(&mut model, 3);
        let x = rand_tensor(&mut rng(4), [4, 3, 32, 32], 0.0, 1.0);
        let mut tape = Tape::new();
        let out = tape.forward(&model, &x, Mode::Train).unwrap();
        let seedgrad = rand_tensor(&mut rng(5), out[0].dims(), -1.0, 1.0);
        tape.commit_running_stats(&mut model).unwrap();
        let grads = tape.backward(&model, &[seedgrad]).unwrap();
        let mut opt = OptState::new(&model, 0.01, 0.9).unwrap();
        sgd_step(&mut model, &grads, &mut opt).unwrap();
        let flat = grads
            .layers
            .iter()
            .flatten()
            .map(|l| l.buffers().concat())
            .collect();
        (out, flat, slimkit::graph::io::to_bytes(&model).unwrap())
    })
}

#[test]
fn forward_backward_update_are_deterministic() {
    let a = train_step(1);
    let b = train_step(1);
    let c = train_step(3);
    for other in [&b, &c] {
        assert!(a.0.iter().zip(&other.0).all(|(x, y)| x.data() == y.data()));
        assert_eq!(a.1, other.1);
        assert_eq!(a.2, other.2);
    }
}

#[test]
fn gradient_kernels_sample() {
    for s in 0..5 {
        assert!(conv_grad_case(s) < FD_TOL);
        assert!(bn_grad_case(s) < FD_TOL);
        assert!(silu_grad_case(s) < FD_TOL);
        assert!(relu_grad_case(s) < FD_TOL);
    }
}
