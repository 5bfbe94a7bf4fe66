//! Single-scale toy detector.
//!
//! Head layout per cell (one box): `[tx, ty, tw, th, objectness, class...]`.
//! Centers decode as `(col + 0.5 + tx) · stride`, sizes as `anchor · e^tw`.

use serde::{Deserialize, Serialize};

use super::scene::shape_name;
use crate::error::{Error, Result};
use crate::graph::fixtures::GraphBuilder;
use crate::graph::{head_channels, GraphModel};
use crate::runtime::params::LayerTensors;

pub const BOX_CHANNELS: usize = 4;
pub const OBJ_CHANNEL: usize = 4;
pub const CLASS_OFFSET: usize = 5;
/// Initial objectness bias (prior ≈ 1.8%).
pub const OBJ_BIAS_INIT: f64 = -4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct ToyDetConfig {
    pub image_size: usize,
    pub base_width: usize,
    /// Residual blocks at the output resolution.
    pub blocks: usize,
    /// Output stride; a power of two, one stride-2 conv per factor of two.
    pub stride: usize,
    pub classes: usize,
    /// Reference box side in pixels.
    pub anchor: f64,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub seed: u64,
}

impl Default for ToyDetConfig {
    fn default() -> Self {
        ToyDetConfig {
            image_size: 96,
            base_width: 16,
            blocks: 1,
            stride: 8,
            classes: 4,
            anchor: 24.0,
            conf_threshold: 0.01,
            nms_iou: 0.5,
            seed: 0,
        }
    }
}

impl ToyDetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride < 2 || !self.stride.is_power_of_two() {
            return Err(Error::Config(format!(
                "stride must be a power of two >= 2, got {}",
                self.stride
            )));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(self.stride) {
            return Err(Error::Config(format!(
                "stride {} must divide image size {}",
                self.stride, self.image_size
            )));
        }
        if self.base_width == 0 || self.classes == 0 {
            return Err(Error::Config(
                "base width and class count must be positive".into(),
            ));
        }
        if !(self.anchor > 0.0) {
            return Err(Error::Config(format!(
                "anchor must be positive, got {}",
                self.anchor
            )));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) || !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config(
                "confidence and NMS thresholds must lie in [0,1]".into(),
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.stride
    }

    pub fn head_channels(&self) -> usize {
        head_channels(self.classes, 1)
    }

    /// Channel widths of the stride-2 stages.
    pub fn stage_widths(&self) -> Vec<usize> {
        let stages = self.stride.trailing_zeros() as usize;
        (0..stages)
            .map(|i| self.base_width * if i == 0 { 1 } else { 2 })
            .collect()
    }
}

/// Stem and downsampling conv-BN-SiLU stages, residual blocks, 1×1 head.
pub fn build_toydet(cfg: &ToyDetConfig) -> Result<GraphModel> {
    cfg.validate()?;
    let mut b = GraphBuilder::new([3, cfg.image_size, cfg.image_size], cfg.seed);
    let widths = cfg.stage_widths();
    let mut x: Option<String> = None;
    for (i, w) in widths.iter().enumerate() {
        x = Some(b.conv_bn_silu(&format!("s{i}"), x.as_deref(), *w, 3, 2));
    }
    let mut x = x.expect("at least one stage");
    let w = *widths.last().expect("at least one stage");
    for i in 0..cfg.blocks {
        let h = b.conv_bn_silu(&format!("r{i}.cv1"), Some(&x), w, 3, 1);
        let h = b.conv_bn_silu(&format!("r{i}.cv2"), Some(&h), w, 3, 1);
        x = b.add(&format!("r{i}.add"), &[&x, &h]);
    }
    let head = b.conv("head.conv", Some(&x), cfg.head_channels(), 1, 1, true);
    let out = b.detect("head", &head, cfg.classes, 1);
    let classes = (0..cfg.classes).map(shape_name).collect();
    let mut model = b.finish("toydet", classes, vec![out]);
    if let Some(LayerTensors::Conv(p)) = model.node_mut("head.conv").and_then(|n| n.params.as_mut())
    {
        let bias = p.bias.as_mut().expect("head conv has a bias");
        bias.iter_mut().for_each(|v| *v = 0.0);
        bias[OBJ_CHANNEL] = OBJ_BIAS_INIT;
    }
    model.validate()?;
    Ok(model)
}
