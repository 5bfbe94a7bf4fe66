//! Programmatic graph construction and the bundled YOLOv5s-style topology.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{head_channels, GraphModel, NodeSpec, Op};
use crate::runtime::params::{BnParams, ConvAttrs, ConvParams, LayerTensors, PoolAttrs};
use crate::runtime::BN_EPS;

/// Builds graphs node by node with seeded uniform(±1/√fan_in) conv init and
/// identity batch norms.
pub struct GraphBuilder {
    input_shape: [usize; 3],
    nodes: Vec<NodeSpec>,
    channels: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl GraphBuilder {
    pub fn new(input_shape: [usize; 3], seed: u64) -> Self {
        GraphBuilder {
            input_shape,
            nodes: Vec::new(),
            channels: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn channels_of(&self, id: &str) -> usize {
        self.channels[id]
    }

    fn in_channels(&self, input: Option<&str>) -> usize {
        match input {
            Some(id) => self.channels[id],
            None => self.input_shape[0],
        }
    }

    fn push(&mut self, node: NodeSpec, out_ch: usize) -> String {
        let id = node.id.clone();
        self.channels.insert(id.clone(), out_ch);
        self.nodes.push(node);
        id
    }

    /// `input = None` reads the graph input.
    pub fn conv(
        &mut self,
        id: &str,
        input: Option<&str>,
        out_ch: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> String {
        let in_ch = self.in_channels(input);
        let attrs = ConvAttrs::new(in_ch, out_ch, k, stride, k / 2, bias);
        let bound = 1.0 / (attrs.fan_in() as f64).sqrt();
        let weight = (0..attrs.weight_len())
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        let bias = bias.then(|| {
            (0..out_ch)
                .map(|_| self.rng.gen_range(-bound..bound))
                .collect()
        });
        let inputs: Vec<&str> = input.into_iter().collect();
        let node = NodeSpec::new(id, Op::Conv(attrs), &inputs)
            .with_params(LayerTensors::Conv(ConvParams { weight, bias }));
        self.push(node, out_ch)
    }

    pub fn batchnorm(&mut self, id: &str, input: &str) -> String {
        let c = self.channels[input];
        let node = NodeSpec::new(
            id,
            Op::BatchNorm {
                channels: c,
                eps: BN_EPS,
            },
            &[input],
        )
        .with_params(LayerTensors::BatchNorm(BnParams::identity(c)));
        self.push(node, c)
    }

    pub fn unary(&mut self, id: &str, op: Op, input: &str) -> String {
        let c = self.channels[input];
        self.push(NodeSpec::new(id, op, &[input]), c)
    }

    pub fn silu(&mut self, id: &str, input: &str) -> String {
        self.unary(id, Op::Silu, input)
    }

    pub fn maxpool(&mut self, id: &str, input: &str, attrs: PoolAttrs) -> String {
        self.unary(id, Op::MaxPool(attrs), input)
    }

    pub fn upsample(&mut self, id: &str, input: &str) -> String {
        self.unary(id, Op::UpsampleNearest2, input)
    }

    pub fn concat(&mut self, id: &str, inputs: &[&str]) -> String {
        let c = inputs.iter().map(|i| self.channels[*i]).sum();
        self.push(NodeSpec::new(id, Op::Concat, inputs), c)
    }

    pub fn add(&mut self, id: &str, inputs: &[&str]) -> String {
        let c = self.channels[inputs[0]];
        self.push(NodeSpec::new(id, Op::Add, inputs), c)
    }

    pub fn detect(
        &mut self,
        id: &str,
        input: &str,
        classes: usize,
        boxes_per_cell: usize,
    ) -> String {
        self.unary(
            id,
            Op::DetectHead {
                classes,
                boxes_per_cell,
            },
            input,
        )
    }

    /// conv(no bias) → batchnorm → SiLU, ids `{prefix}.conv/.bn/.act`.
    pub fn conv_bn_silu(
        &mut self,
        prefix: &str,
        input: Option<&str>,
        out_ch: usize,
        k: usize,
        stride: usize,
    ) -> String {
        let c = self.conv(&format!("{prefix}.conv"), input, out_ch, k, stride, false);
        let b = self.batchnorm(&format!("{prefix}.bn"), &c);
        self.silu(&format!("{prefix}.act"), &b)
    }

    pub fn finish(self, name: &str, classes: Vec<String>, outputs: Vec<String>) -> GraphModel {
        GraphModel {
            name: name.into(),
            input_shape: self.input_shape,
            classes,
            nodes: self.nodes,
            outputs,
        }
    }
}

/// Shape of the YOLOv5s-style topology.
#[derive(Debug, Clone)]
pub struct YoloLikeConfig {
    /// Multiplier on the base widths 64/128/256/512/1024 (0.5 is the
    /// published small variant).
    pub width_multiple: f64,
    /// Multiplier on the base CSP depths 3/9/9/3 (0.33 for the small variant).
    pub depth_multiple: f64,
    pub classes: Vec<String>,
    pub input_hw: usize,
    pub boxes_per_cell: usize,
    pub seed: u64,
}

/// The gesture labels the HMI bindings use.
pub fn gesture_classes() -> Vec<String> {
    ["Ok", "Fist", "Two", "Three", "L", "Hang"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl YoloLikeConfig {
    /// Small-variant widths and depths.
    pub fn small(classes: Vec<String>, input_hw: usize) -> Self {
        YoloLikeConfig {
            width_multiple: 0.5,
            depth_multiple: 0.33,
            classes,
            input_hw,
            boxes_per_cell: 3,
            seed: 0,
        }
    }

    /// The bundled fixture: an eighth of the small-variant widths at 64×64.
    pub fn bundled() -> Self {
        YoloLikeConfig {
            width_multiple: 0.0625,
            input_hw: 64,
            ..Self::small(gesture_classes(), 64)
        }
    }

    fn width(&self, base: usize) -> usize {
        ((base as f64 * self.width_multiple).round() as usize).max(2)
    }

    fn depth(&self, base: usize) -> usize {
        ((base as f64 * self.depth_multiple).round() as usize).max(1)
    }
}

/// CSP block: two 1×1 branches, `n` bottlenecks on the first, concat, 1×1 merge.
fn csp(
    b: &mut GraphBuilder,
    p: &str,
    input: &str,
    out_ch: usize,
    n: usize,
    shortcut: bool,
) -> String {
    let hidden = (out_ch / 2).max(1);
    let mut x = b.conv_bn_silu(&format!("{p}.cv1"), Some(input), hidden, 1, 1);
    for i in 0..n {
        let h = b.conv_bn_silu(&format!("{p}.m{i}.cv1"), Some(&x), hidden, 1, 1);
        let h = b.conv_bn_silu(&format!("{p}.m{i}.cv2"), Some(&h), hidden, 3, 1);
        x = if shortcut {
            b.add(&format!("{p}.m{i}.add"), &[&x, &h])
        } else {
            h
        };
    }
    let side = b.conv_bn_silu(&format!("{p}.cv2"), Some(input), hidden, 1, 1);
    let cat = b.concat(&format!("{p}.cat"), &[&x, &side]);
    b.conv_bn_silu(&format!("{p}.cv3"), Some(&cat), out_ch, 1, 1)
}

fn spp(b: &mut GraphBuilder, p: &str, input: &str, out_ch: usize) -> String {
    let hidden = (b.channels_of(input) / 2).max(1);
    let x = b.conv_bn_silu(&format!("{p}.cv1"), Some(input), hidden, 1, 1);
    let mut branches = vec![x.clone()];
    for k in [5, 9, 13] {
        branches.push(b.maxpool(
            &format!("{p}.pool{k}"),
            &x,
            PoolAttrs {
                kernel: k,
                stride: 1,
                pad: k / 2,
            },
        ));
    }
    let refs: Vec<&str> = branches.iter().map(String::as_str).collect();
    let cat = b.concat(&format!("{p}.cat"), &refs);
    b.conv_bn_silu(&format!("{p}.cv2"), Some(&cat), out_ch, 1, 1)
}

/// Backbone (stride-2 stem, CSP stages, SPP), FPN/PAN neck and three
/// detect heads at strides 8, 16 and 32.
pub fn yolov5s_like(cfg: &YoloLikeConfig) -> GraphModel {
    let nc = cfg.classes.len();
    let mut b = GraphBuilder::new([3, cfg.input_hw, cfg.input_hw], cfg.seed);
    let w = |base| cfg.width(base);

    let x = b.conv_bn_silu("b0", None, w(64), 3, 2);
    let x = b.conv_bn_silu("b1", Some(&x), w(128), 3, 2);
    let x = csp(&mut b, "b2", &x, w(128), cfg.depth(3), true);
    let x = b.conv_bn_silu("b3", Some(&x), w(256), 3, 2);
    let p3 = csp(&mut b, "b4", &x, w(256), cfg.depth(9), true);
    let x = b.conv_bn_silu("b5", Some(&p3), w(512), 3, 2);
    let p4 = csp(&mut b, "b6", &x, w(512), cfg.depth(9), true);
    let x = b.conv_bn_silu("b7", Some(&p4), w(1024), 3, 2);
    let x = spp(&mut b, "b8", &x, w(1024));
    let x = csp(&mut b, "b9", &x, w(1024), cfg.depth(3), false);

    let h10 = b.conv_bn_silu("h10", Some(&x), w(512), 1, 1);
    let x = b.upsample("h11", &h10);
    let x = b.concat("h12", &[&x, &p4]);
    let x = csp(&mut b, "h13", &x, w(512), cfg.depth(3), false);
    let h14 = b.conv_bn_silu("h14", Some(&x), w(256), 1, 1);
    let x = b.upsample("h15", &h14);
    let x = b.concat("h16", &[&x, &p3]);
    let out3 = csp(&mut b, "h17", &x, w(256), cfg.depth(3), false);
    let x = b.conv_bn_silu("h18", Some(&out3), w(256), 3, 2);
    let x = b.concat("h19", &[&x, &h14]);
    let out4 = csp(&mut b, "h20", &x, w(512), cfg.depth(3), false);
    let x = b.conv_bn_silu("h21", Some(&out4), w(512), 3, 2);
    let x = b.concat("h22", &[&x, &h10]);
    let out5 = csp(&mut b, "h23", &x, w(1024), cfg.depth(3), false);

    let hc = head_channels(nc, cfg.boxes_per_cell);
    let mut outputs = Vec::new();
    for (i, src) in [out3, out4, out5].iter().enumerate() {
        let c = b.conv(&format!("detect{i}.conv"), Some(src), hc, 1, 1, true);
        outputs.push(b.detect(&format!("detect{i}"), &c, nc, cfg.boxes_per_cell));
    }
    b.finish("yolov5s-like", cfg.classes.clone(), outputs)
}

/// Description stored in the bundled fixture file.
pub fn bundled_notes() -> String {
    let c = YoloLikeConfig::bundled();
    format!(
        "YOLOv5s-style topology with random weights (seed {}). Widths are {} x the base \
         64/128/256/512/1024 (one eighth of the small variant), CSP depths {} x 3/9/9/3, \
         3 boxes per cell, input {}x{}. Stem is a stride-2 3x3 conv; SPP uses stride-1 \
         5/9/13 max pools.",
        c.seed, c.width_multiple, c.depth_multiple, c.input_hw, c.input_hw
    )
}

/// Overwrite every batch-norm γ with a long-tailed, sparse-training-like
/// draw: roughly 40% near zero, the rest spread over (0.05, 1).
pub fn sparse_like_gammas(model: &mut GraphModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for node in &mut model.nodes {
        if let Some(LayerTensors::BatchNorm(p)) = node.params.as_mut() {
            for g in &mut p.gamma {
                let mag = if rng.gen_bool(0.4) {
                    rng.gen_range(0.0..0.02)
                } else {
                    rng.gen_range(0.05..1.0)
                };
                *g = if rng.gen_bool(0.1) { -mag } else { mag };
            }
        }
    }
}

/// Randomize all BN statistics and β so inference-mode outputs exercise
/// every parameter.
pub fn randomize_bn(model: &mut GraphModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for node in &mut model.nodes {
        if let Some(LayerTensors::BatchNorm(p)) = node.params.as_mut() {
            for c in 0..p.channels() {
                p.gamma[c] = rng.gen_range(0.2..1.5);
                p.beta[c] = rng.gen_range(-0.5..0.5);
                p.running_mean[c] = rng.gen_range(-0.3..0.3);
                p.running_var[c] = rng.gen_range(0.5..2.0);
            }
        }
    }
}
