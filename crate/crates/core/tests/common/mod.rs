//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slimkit::bench::loss::det_loss;
use slimkit::bench::{SceneObject, ToyDetConfig};
use slimkit::metrics::{BoxDet, GroundTruth};
use slimkit::runtime::kernels::{self, Mode};
use slimkit::runtime::{BnParams, ConvAttrs, ConvParams, PoolAttrs};
use slimkit::Tensor4;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4], lo: f64, hi: f64) -> Tensor4 {
    let n = dims.iter().product();
    Tensor4::from_vec(dims, rand_vec(rng, n, lo, hi)).unwrap()
}

/// `|a − n| / max(|a|, |n|)`, with a floor of 1e-7 on the denominator so
/// exact zeros on both sides compare as equal.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Largest relative error between `analytic[i]` and the central difference
/// of `f` in coordinate `i`, over every coordinate of `x`.
pub fn fd_max_err(x: &[f64], analytic: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn dot(a: &Tensor4, b: &Tensor4) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Six-deep loop convolution, zero padding.
pub fn naive_conv(x: &Tensor4, a: &ConvAttrs, p: &ConvParams) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let ho = (h + 2 * a.pad - a.kh) / a.stride + 1;
    let wo = (w + 2 * a.pad - a.kw) / a.stride + 1;
    let mut y = Tensor4::zeros([n, a.out_ch, ho, wo]);
    for b in 0..n {
        for o in 0..a.out_ch {
            for i in 0..ho {
                for j in 0..wo {
                    let mut s = p.bias.as_ref().map_or(0.0, |bv| bv[o]);
                    for ci in 0..c {
                        for ki in 0..a.kh {
                            for kj in 0..a.kw {
                                let r = (i * a.stride + ki) as isize - a.pad as isize;
                                let q = (j * a.stride + kj) as isize - a.pad as isize;
                                if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                    continue;
                                }
                                let wi = ((o * c + ci) * a.kh + ki) * a.kw + kj;
                                s += p.weight[wi] * x.at(b, ci, r as usize, q as usize);
                            }
                        }
                    }
                    y.set(b, o, i, j, s);
                }
            }
        }
    }
    y
}

// ── Gradient cases: loss = Σ r ⊙ y for a random probe r ─────────────

/// Conv with random geometry; checks input, weight and bias gradients.
pub fn conv_grad_case(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (cin, cout) = (g.gen_range(1..4), g.gen_range(1..4));
    let k = [1, 3][g.gen_range(0..2)];
    let stride = g.gen_range(1..3);
    let pad = g.gen_range(0..=k / 2);
    let (h, w) = (g.gen_range(k.max(3)..7), g.gen_range(k.max(3)..7));
    let a = ConvAttrs::new(cin, cout, k, stride, pad, true);
    let x = rand_tensor(&mut g, [2, cin, h, w], -1.0, 1.0);
    let p = ConvParams {
        weight: rand_vec(&mut g, a.weight_len(), -1.0, 1.0),
        bias: Some(rand_vec(&mut g, cout, -1.0, 1.0)),
    };
    let y = kernels::conv2d_forward(&x, &a, &p, "c").unwrap();
    let r = rand_tensor(&mut g, y.dims(), -1.0, 1.0);
    let back = kernels::conv2d_backward(&x, &a, &p, &r, "c").unwrap();
    let loss =
        |x: &Tensor4, p: &ConvParams| dot(&kernels::conv2d_forward(x, &a, p, "c").unwrap(), &r);

    let e_in = fd_max_err(x.data(), back.input.data(), &|v| {
        loss(&Tensor4::from_vec(x.dims(), v.to_vec()).unwrap(), &p)
    });
    let e_w = fd_max_err(&p.weight, &back.weight, &|v| {
        loss(
            &x,
            &ConvParams {
                weight: v.to_vec(),
                bias: p.bias.clone(),
            },
        )
    });
    let e_b = fd_max_err(
        p.bias.as_ref().unwrap(),
        back.bias.as_ref().unwrap(),
        &|v| {
            loss(
                &x,
                &ConvParams {
                    weight: p.weight.clone(),
                    bias: Some(v.to_vec()),
                },
            )
        },
    );
    e_in.max(e_w).max(e_b)
}

/// Train-mode batch norm; checks input, γ and β gradients.
pub fn bn_grad_case(seed: u64) -> f64 {
    let mut g = rng(seed);
    let c = g.gen_range(1..4);
    let dims = [g.gen_range(2..4), c, g.gen_range(2..5), g.gen_range(2..5)];
    let x = rand_tensor(&mut g, dims, -2.0, 2.0);
    let mut p = BnParams::identity(c);
    p.gamma = rand_vec(&mut g, c, 0.2, 1.5);
    p.beta = rand_vec(&mut g, c, -0.5, 0.5);
    let eps = kernels::BN_EPS;
    let (y, cache) = kernels::batchnorm_forward(&x, &p, eps, Mode::Train, "bn").unwrap();
    let r = rand_tensor(&mut g, y.dims(), -1.0, 1.0);
    let back = kernels::batchnorm_backward(&p, &cache, &r);
    let loss = |x: &Tensor4, p: &BnParams| {
        dot(
            &kernels::batchnorm_forward(x, p, eps, Mode::Train, "bn")
                .unwrap()
                .0,
            &r,
        )
    };
    let e_in = fd_max_err(x.data(), back.input.data(), &|v| {
        loss(&Tensor4::from_vec(dims, v.to_vec()).unwrap(), &p)
    });
    let e_g = fd_max_err(&p.gamma, &back.gamma, &|v| {
        let mut q = p.clone();
        q.gamma = v.to_vec();
        loss(&x, &q)
    });
    let e_b = fd_max_err(&p.beta, &back.beta, &|v| {
        let mut q = p.clone();
        q.beta = v.to_vec();
        loss(&x, &q)
    });
    e_in.max(e_g).max(e_b)
}

fn unary_case(
    seed: u64,
    fwd: fn(&Tensor4) -> Tensor4,
    bwd: fn(&Tensor4, &Tensor4) -> Tensor4,
    kink_free: bool,
) -> f64 {
    let mut g = rng(seed);
    let dims = [
        g.gen_range(1..3),
        g.gen_range(1..4),
        g.gen_range(1..5),
        g.gen_range(1..5),
    ];
    let mut x = rand_tensor(&mut g, dims, -3.0, 3.0);
    if kink_free {
        // keep every input well clear of the ReLU kink
        for v in x.data_mut() {
            if v.abs() < 0.01 {
                *v += 0.05;
            }
        }
    }
    let r = rand_tensor(&mut g, dims, -1.0, 1.0);
    let analytic = bwd(&x, &r);
    fd_max_err(x.data(), analytic.data(), &|v| {
        dot(&fwd(&Tensor4::from_vec(dims, v.to_vec()).unwrap()), &r)
    })
}

pub fn silu_grad_case(seed: u64) -> f64 {
    unary_case(seed, kernels::silu_forward, kernels::silu_backward, false)
}

pub fn relu_grad_case(seed: u64) -> f64 {
    unary_case(seed, kernels::relu_forward, kernels::relu_backward, true)
}

/// Max pooling on distinct values (no ties inside a window).
pub fn maxpool_grad_case(seed: u64) -> f64 {
    let mut g = rng(seed);
    let k = [2, 3, 5][g.gen_range(0..3)];
    let attrs = PoolAttrs {
        kernel: k,
        stride: g.gen_range(1..3),
        pad: g.gen_range(0..=k / 2),
    };
    let dims = [
        1,
        g.gen_range(1..3),
        g.gen_range(k..k + 4),
        g.gen_range(k..k + 4),
    ];
    let n: usize = dims.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(&mut g);
    let x = Tensor4::from_vec(dims, vals).unwrap();
    let (y, argmax) = kernels::maxpool_forward(&x, &attrs, "p").unwrap();
    let r = rand_tensor(&mut g, y.dims(), -1.0, 1.0);
    let analytic = kernels::maxpool_backward(dims, &argmax, &r);
    fd_max_err(x.data(), analytic.data(), &|v| {
        let t = Tensor4::from_vec(dims, v.to_vec()).unwrap();
        dot(&kernels::maxpool_forward(&t, &attrs, "p").unwrap().0, &r)
    })
}

pub fn upsample_grad_case(seed: u64) -> f64 {
    let mut g = rng(seed);
    let dims = [
        g.gen_range(1..3),
        g.gen_range(1..3),
        g.gen_range(1..4),
        g.gen_range(1..4),
    ];
    let x = rand_tensor(&mut g, dims, -1.0, 1.0);
    let y = kernels::upsample2_forward(&x);
    let r = rand_tensor(&mut g, y.dims(), -1.0, 1.0);
    let analytic = kernels::upsample2_backward(&r);
    fd_max_err(x.data(), analytic.data(), &|v| {
        dot(
            &kernels::upsample2_forward(&Tensor4::from_vec(dims, v.to_vec()).unwrap()),
            &r,
        )
    })
}

/// Random objects for a `size`-pixel image.
pub fn random_objects(
    g: &mut ChaCha8Rng,
    size: f64,
    classes: usize,
    max: usize,
) -> Vec<SceneObject> {
    (0..g.gen_range(0..=max))
        .map(|_| {
            let w = g.gen_range(6.0..size / 2.0);
            let h = g.gen_range(6.0..size / 2.0);
            let x1 = g.gen_range(0.0..size - w);
            let y1 = g.gen_range(0.0..size - h);
            SceneObject {
                class_id: g.gen_range(0..classes),
                bbox: [x1, y1, x1 + w, y1 + h],
            }
        })
        .collect()
}

/// Detection loss on random logits against random objects; checks the
/// gradient with respect to every head output.
pub fn det_loss_grad_case(seed: u64) -> f64 {
    let mut g = rng(seed);
    let cfg = ToyDetConfig {
        image_size: 32,
        stride: 8,
        classes: g.gen_range(2..4),
        ..Default::default()
    };
    let batch = g.gen_range(1..3);
    let objs: Vec<Vec<SceneObject>> = (0..batch)
        .map(|_| random_objects(&mut g, 32.0, cfg.classes, 3))
        .collect();
    let targets: Vec<&[SceneObject]> = objs.iter().map(Vec::as_slice).collect();
    let gs = cfg.grid();
    let dims = [batch, cfg.head_channels(), gs, gs];
    let raw = rand_tensor(&mut g, dims, -2.0, 2.0);
    let (_, grad) = det_loss(&cfg, &raw, &targets).unwrap();
    fd_max_err(raw.data(), grad.data(), &|v| {
        det_loss(
            &cfg,
            &Tensor4::from_vec(dims, v.to_vec()).unwrap(),
            &targets,
        )
        .unwrap()
        .0
    })
}

// ── Metrics reference ───────────────────────────────────────────────

pub fn det(image_id: usize, class_id: usize, bbox: [f64; 4], confidence: f64) -> BoxDet {
    BoxDet {
        image_id,
        class_id,
        bbox,
        confidence,
    }
}

pub fn gt(image_id: usize, class_id: usize, bbox: [f64; 4]) -> GroundTruth {
    GroundTruth {
        image_id,
        class_id,
        bbox,
    }
}

fn naive_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let i = ix * iy;
    let u = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - i;
    if i <= 0.0 || u <= 0.0 {
        0.0
    } else {
        i / u
    }
}

/// Greedy matching within one class: confidence order (stable), each
/// detection takes the best unmatched same-image box at IoU ≥ `t`.
fn naive_flags(dets: &[&BoxDet], gts: &[&GroundTruth], t: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.partial_cmp(&dets[a].confidence).unwrap());
    let mut used = vec![false; gts.len()];
    let mut out = Vec::new();
    for i in order {
        let d = dets[i];
        let mut best = None;
        let mut best_iou = t;
        for (j, g) in gts.iter().enumerate() {
            if used[j] || g.image_id != d.image_id {
                continue;
            }
            let v = naive_iou(&d.bbox, &g.bbox);
            if v >= best_iou && (best.is_none() || v > best_iou) {
                best = Some(j);
                best_iou = v;
            }
        }
        if let Some(j) = best {
            used[j] = true;
        }
        out.push((d.confidence, best.is_some()));
    }
    out
}

/// AP as the mean over r ∈ {0, 0.01, …, 1} of the best precision at any
/// rank whose recall reaches r.
fn naive_ap(ranked: &[(f64, bool)], n_gt: usize) -> f64 {
    let mut pts = Vec::new();
    let mut tp = 0;
    for (k, (_, hit)) in ranked.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        pts.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut s = 0.0;
    for r in 0..=100 {
        let r = r as f64 / 100.0;
        s += pts
            .iter()
            .filter(|p| p.0 >= r)
            .map(|p| p.1)
            .fold(0.0, f64::max);
    }
    s / 101.0
}

/// (mAP per threshold, mAP50, mAP50-95).
pub fn naive_map(
    dets: &[BoxDet],
    gts: &[GroundTruth],
    classes: usize,
    thresholds: &[f64],
) -> (Vec<f64>, f64, f64) {
    let per: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            let mut aps = Vec::new();
            for c in 0..classes {
                let cd: Vec<&BoxDet> = dets.iter().filter(|d| d.class_id == c).collect();
                let cg: Vec<&GroundTruth> = gts.iter().filter(|g| g.class_id == c).collect();
                match (cd.is_empty(), cg.is_empty()) {
                    (true, true) => {}
                    (false, true) => aps.push(0.0),
                    _ => aps.push(naive_ap(&naive_flags(&cd, &cg, t), cg.len())),
                }
            }
            if aps.is_empty() {
                0.0
            } else {
                aps.iter().sum::<f64>() / aps.len() as f64
            }
        })
        .collect();
    let m50 = per[0];
    let m = per.iter().sum::<f64>() / per.len() as f64;
    (per, m50, m)
}

/// Random instance: ≤ `images` images, ≤ 5 ground-truth boxes each, detections
/// jittered from the truth plus random false positives.
pub fn random_instance(
    g: &mut ChaCha8Rng,
    images: usize,
    classes: usize,
) -> (Vec<BoxDet>, Vec<GroundTruth>) {
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for img in 0..g.gen_range(1..=images) {
        for _ in 0..g.gen_range(0..=5) {
            let (x, y) = (g.gen_range(0.0..80.0), g.gen_range(0.0..80.0));
            let (w, h) = (g.gen_range(5.0..30.0), g.gen_range(5.0..30.0));
            let b = [x, y, x + w, y + h];
            let c = g.gen_range(0..classes);
            gts.push(gt(img, c, b));
            for _ in 0..g.gen_range(0..3) {
                let j = |v: f64, g: &mut ChaCha8Rng| v + g.gen_range(-4.0..4.0);
                let jb = [j(b[0], g), j(b[1], g), j(b[2], g), j(b[3], g)];
                if jb[2] > jb[0] && jb[3] > jb[1] {
                    let cls = if g.gen_bool(0.85) {
                        c
                    } else {
                        g.gen_range(0..classes)
                    };
                    dets.push(det(img, cls, jb, g.gen_range(0.0..1.0)));
                }
            }
        }
        for _ in 0..g.gen_range(0..3) {
            let (x, y) = (g.gen_range(0.0..80.0), g.gen_range(0.0..80.0));
            dets.push(det(
                img,
                g.gen_range(0..classes),
                [x, y, x + 10.0, y + 10.0],
                g.gen_range(0.0..1.0),
            ));
        }
    }
    (dets, gts)
}
