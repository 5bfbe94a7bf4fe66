mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{rand_tensor, rng};
use slimkit::bench::dataset::DATASET_FORMAT;
use slimkit::bench::toydet::{CLASS_OFFSET, OBJ_CHANNEL};
use slimkit::bench::{
    self, build_toydet, decode_and_nms, decode_cells, generate_dataset, nms, read_dataset,
    write_dataset, SceneConfig, ToyDetConfig,
};
use slimkit::config::RunConfig;
use slimkit::graph::cost::full_report;
use slimkit::graph::{count_flops, coupling_groups, infer_shapes};
use slimkit::metrics::{iou, BoxDet};
use slimkit::prune::{prune, PruneConfig, SparseConfig};
use slimkit::Tensor4;

fn small_scene(seed: u64) -> SceneConfig {
    SceneConfig {
        seed,
        ..SceneConfig::default()
    }
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn seed_seven_is_reproducible_in_memory_and_on_disk() {
    let a = generate_dataset(&small_scene(7), 12, 4).unwrap();
    let b = generate_dataset(&small_scene(7), 12, 4).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&small_scene(8), 12, 4).unwrap();
    assert_ne!(a.train.scenes, c.train.scenes);

    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(&a, d1.path()).unwrap();
    write_dataset(&b, d2.path()).unwrap();
    let (f1, f2) = (dir_bytes(d1.path()), dir_bytes(d2.path()));
    assert_eq!(f1.len(), 2 * 16 + 1);
    assert_eq!(f1, f2);
}

#[test]
fn written_dataset_reads_back() {
    let splits = generate_dataset(&small_scene(3), 6, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&splits, dir.path()).unwrap();
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.contains(DATASET_FORMAT));
    for back in [read_dataset(&manifest).unwrap(), read_dataset(dir.path()).unwrap()] {
        assert_eq!(back.config, splits.config);
        for (x, y) in [(&splits.train, &back.train), (&splits.val, &back.val)] {
            assert_eq!(x.class_names, y.class_names);
            assert_eq!(x.len(), y.len());
            for (s, t) in x.scenes.iter().zip(&y.scenes) {
                assert_eq!(s.pixels, t.pixels);
                assert_eq!(s.objects.len(), t.objects.len());
                for (o, p) in s.objects.iter().zip(&t.objects) {
                    assert_eq!(o.class_id, p.class_id);
                    assert!(o.bbox.iter().zip(&p.bbox).all(|(a, b)| (a - b).abs() < 1e-3));
                }
            }
        }
    }
}

/// With no clutter or noise, every non-background pixel lies inside an
/// object box and each box equals the scanned extent of its pixels.
#[test]
fn clean_scenes_have_tight_boxes() {
    let cfg = SceneConfig {
        clutter: 0.0,
        noise_sigma: 0.0,
        ..small_scene(11)
    };
    let data = generate_dataset(&cfg, 20, 1).unwrap().train;
    for s in &data.scenes {
        let n = s.size;
        let mut seen: Vec<[usize; 4]> = vec![[usize::MAX, usize::MAX, 0, 0]; s.objects.len()];
        for y in 0..n {
            for x in 0..n {
                if s.pixel(x, y) == s.background {
                    continue;
                }
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let k = s
                    .objects
                    .iter()
                    .position(|o| fx > o.bbox[0] && fx < o.bbox[2] && fy > o.bbox[1] && fy < o.bbox[3])
                    .unwrap_or_else(|| panic!("stray pixel at ({x},{y})"));
                let b = &mut seen[k];
                *b = [b[0].min(x), b[1].min(y), b[2].max(x + 1), b[3].max(y + 1)];
            }
        }
        for (o, b) in s.objects.iter().zip(&seen) {
            let scanned = [b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64];
            assert_eq!(o.bbox, scanned);
        }
    }
}

#[test]
fn class_histogram_is_near_uniform() {
    let data = generate_dataset(&small_scene(0), 400, 1).unwrap().train;
    let h = data.class_histogram();
    let total: usize = h.iter().sum();
    let uniform = total as f64 / h.len() as f64;
    for (c, &n) in h.iter().enumerate() {
        let dev = (n as f64 - uniform).abs() / uniform;
        assert!(dev <= 0.2, "class {c}: {n} vs {uniform:.1}");
    }
}

#[test]
fn default_toydet_shapes_and_coupling() {
    let m = build_toydet(&ToyDetConfig::default()).unwrap();
    assert_eq!(m.input_shape, [3, 96, 96]);
    let s = infer_shapes(&m).unwrap();
    assert_eq!(s["head"], [9, 12, 12]);
    let a = coupling_groups(&m).unwrap();
    assert_eq!(a.groups.len(), 1);
    assert_eq!(a.groups[0].members, vec!["s2.bn", "r0.cv2.bn"]);
    assert_eq!(a.prunable.len(), 5);
}

/// Convs are (in, out, k): s0 3→16, s1 16→32, s2 32→32, r0.cv1 and r0.cv2
/// 32→32, all 3×3 without bias; head 32→9 1×1 with bias. Outputs are
/// 48², 24², 12², 12², 12², 12².
#[test]
fn default_toydet_costs_match_hand_arithmetic() {
    let m = build_toydet(&ToyDetConfig::default()).unwrap();
    let convs = [(3, 16, 9, 48), (16, 32, 9, 24), (32, 32, 9, 12), (32, 32, 9, 12), (32, 32, 9, 12)];
    let weights: u64 = convs.iter().map(|&(i, o, k, _)| i * o * k).sum::<u64>() + 32 * 9 + 9;
    let bn_channels: u64 = convs.iter().map(|c| c.1).sum();
    let r = full_report(&m).unwrap();
    assert_eq!(r.params_trainable, weights + 2 * bn_channels);
    assert_eq!(r.params_trainable, 33_273);
    assert_eq!(r.params_total, 33_273 + 2 * bn_channels);

    // conv 2·MAC, BN 2/elem, SiLU 1/elem, add 1/elem, head conv 2·MAC
    let mut flops: u64 = convs
        .iter()
        .map(|&(i, o, k, hw)| 2 * i * o * k * hw * hw + 3 * o * hw * hw)
        .sum();
    flops += 32 * 144 + 2 * 32 * 9 * 144;
    assert_eq!(count_flops(&m, m.input_shape).unwrap().flops, flops);
    assert_eq!(flops, 15_556_608);
}

/// Forward suppression over the confidence order with a full IoU matrix.
fn reference_nms(boxes: &[BoxDet], t: f64) -> Vec<BoxDet> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].confidence.partial_cmp(&boxes[a].confidence).unwrap());
    let n = boxes.len();
    let m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| iou(&boxes[i].bbox, &boxes[j].bbox)).collect()).collect();
    let mut alive = vec![true; n];
    for (k, &i) in order.iter().enumerate() {
        if !alive[i] {
            continue;
        }
        for &j in &order[k + 1..] {
            if boxes[j].class_id == boxes[i].class_id && boxes[j].image_id == boxes[i].image_id && m[i][j] > t {
                alive[j] = false;
            }
        }
    }
    order.into_iter().filter(|&i| alive[i]).map(|i| boxes[i].clone()).collect()
}

fn random_head(seed: u64, cfg: &ToyDetConfig) -> Tensor4 {
    let g = cfg.grid();
    let mut g_rng = rng(seed);
    let mut t = rand_tensor(&mut g_rng, [2, cfg.head_channels(), g, g], -1.0, 1.0);
    for v in t.data_mut() {
        *v *= 3.0 * g_rng.gen_range(0.0..1.0);
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nms_matches_reference(seed in any::<u64>(), thr in 0.1f64..0.9) {
        let cfg = ToyDetConfig { conf_threshold: 0.05, nms_iou: thr, ..Default::default() };
        let raw = random_head(seed, &cfg);
        let mut cells = decode_cells(&cfg, &raw, 0, 0);
        cells.extend(decode_cells(&cfg, &raw, 1, 1));
        prop_assert!(!cells.is_empty());
        prop_assert_eq!(nms(cells.clone(), thr), reference_nms(&cells, thr));
    }

    #[test]
    fn decoded_boxes_stay_in_bounds(seed in any::<u64>()) {
        let cfg = ToyDetConfig { conf_threshold: 0.0, ..Default::default() };
        let mut raw = random_head(seed, &cfg);
        for v in raw.data_mut() {
            *v *= 20.0;
        }
        let size = cfg.image_size as f64;
        for n in 0..2 {
            for d in decode_and_nms(&cfg, &raw, n, n) {
                prop_assert!(d.bbox.iter().all(|v| (0.0..=size).contains(v)));
                prop_assert!(d.bbox[0] < d.bbox[2] && d.bbox[1] < d.bbox[3]);
                prop_assert!((0.0..=1.0).contains(&d.confidence));
            }
        }
    }
}

#[test]
fn single_hot_cell_decodes_to_its_box() {
    let cfg = ToyDetConfig::default();
    let g = cfg.grid();
    let mut raw = Tensor4::filled([1, cfg.head_channels(), g, g], -20.0);
    for ch in 0..4 {
        for c in 0..g * g {
            raw.data_mut()[ch * g * g + c] = 0.0;
        }
    }
    let (row, col) = (3, 5);
    raw.set(0, OBJ_CHANNEL, row, col, 20.0);
    raw.set(0, CLASS_OFFSET + 2, row, col, 20.0);
    let d = decode_and_nms(&cfg, &raw, 0, 0);
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].class_id, 2);
    let (cx, cy) = ((col as f64 + 0.5) * 8.0, (row as f64 + 0.5) * 8.0);
    assert_eq!(d[0].bbox, [cx - 12.0, cy - 12.0, cx + 12.0, cy + 12.0]);
}

#[test]
fn zero_epochs_leaves_evaluation_unchanged() {
    let splits = generate_dataset(&small_scene(1), 8, 8).unwrap();
    let det = ToyDetConfig::default();
    let m = build_toydet(&det).unwrap();
    let cfg = SparseConfig {
        lambda: 0.0,
        epochs: 0,
        ..RunConfig::default().train
    };
    let out = bench::train(m.clone(), &splits.train, &det, &cfg).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(
        bench::evaluate(&out.model, &splits.val, &det).unwrap(),
        bench::evaluate(&m, &splits.val, &det).unwrap()
    );
}

#[test]
fn training_is_deterministic() {
    let splits = generate_dataset(&small_scene(2), 16, 4).unwrap();
    let det = ToyDetConfig {
        base_width: 4,
        ..Default::default()
    };
    let cfg = SparseConfig {
        epochs: 2,
        batch_size: 8,
        ..RunConfig::default().train
    };
    let run = || bench::train(build_toydet(&det).unwrap(), &splits.train, &det, &cfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(
        slimkit::graph::io::to_bytes(&a.model).unwrap(),
        slimkit::graph::io::to_bytes(&b.model).unwrap()
    );
}

#[test]
fn mismatched_detector_is_rejected() {
    let splits = generate_dataset(&small_scene(1), 2, 1).unwrap();
    let det = ToyDetConfig {
        classes: 5,
        ..Default::default()
    };
    let m = build_toydet(&det).unwrap();
    assert!(bench::evaluate(&m, &splits.val, &det).is_err());
}

/// The shipped defaults: 200 training images, 30 epochs.
#[test]
fn default_run_reaches_map50_and_loss_falls() {
    let cfg = RunConfig::default().with_seed(0);
    let splits = generate_dataset(&cfg.scene, cfg.n_train, cfg.n_val).unwrap();
    let model = build_toydet(&cfg.detector).unwrap();
    let out = bench::train(model, &splits.train, &cfg.detector, &cfg.train).unwrap();
    let r = bench::evaluate(&out.model, &splits.val, &cfg.detector).unwrap();
    assert!(r.map50 >= 0.80, "mAP@50 {}", r.map50);

    let losses: Vec<f64> = out.log.iter().map(|s| s.task_loss).collect();
    assert_eq!(losses.len(), 30);
    let windows: Vec<f64> = losses.chunks(5).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    assert!(
        windows.windows(2).all(|w| w[1] < w[0]),
        "window means {windows:?}"
    );
}

/// sparse-train → prune(0.2) → fine-tune on a reduced setup: every node
/// shape-checks and evaluation succeeds.
#[test]
fn small_pipeline_shape_checks() {
    let splits = generate_dataset(&small_scene(4), 24, 8).unwrap();
    let det = ToyDetConfig {
        base_width: 8,
        ..Default::default()
    };
    let base = RunConfig::default();
    let short = |c: SparseConfig| SparseConfig { epochs: 2, ..c };
    let sparse = bench::train(build_toydet(&det).unwrap(), &splits.train, &det, &short(base.sparse)).unwrap();
    let (pruned, report) = prune(&sparse.model, &PruneConfig::with_rate(0.2)).unwrap();
    assert!(report.flops_after < report.flops_before);
    let tuned = bench::finetune(pruned, &splits.train, &splits.val, &det, &short(base.finetune)).unwrap();
    let shapes = infer_shapes(&tuned.model).unwrap();
    assert_eq!(shapes.len(), tuned.model.nodes.len());
    assert_eq!(shapes["head"], [det.head_channels(), 12, 12]);
    bench::evaluate(&tuned.model, &splits.val, &det).unwrap();
}
