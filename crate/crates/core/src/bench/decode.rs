//! Head decoding and per-class greedy NMS.

use super::loss::sigmoid;
use super::toydet::{ToyDetConfig, CLASS_OFFSET, OBJ_CHANNEL};
use crate::metrics::{iou, BoxDet};
use crate::tensor::Tensor4;

/// Largest accepted size logit; keeps `e^tw` finite on wild outputs.
const MAX_SIZE_LOGIT: f64 = 8.0;

/// Boxes for sample `n` whose `σ(obj)·max σ(cls)` reaches the threshold,
/// clipped to the image, in cell order.
pub fn decode_cells(cfg: &ToyDetConfig, raw: &Tensor4, n: usize, image_id: usize) -> Vec<BoxDet> {
    let g = cfg.grid();
    let s = cfg.stride as f64;
    let size = cfg.image_size as f64;
    let plane = g * g;
    let x = raw.sample(n);
    let mut out = Vec::new();
    for cell in 0..plane {
        let at = |ch: usize| x[ch * plane + cell];
        let obj = sigmoid(at(OBJ_CHANNEL));
        let (class_id, cls) = (0..cfg.classes)
            .map(|k| (k, sigmoid(at(CLASS_OFFSET + k))))
            .fold(
                (0, f64::NEG_INFINITY),
                |best, c| if c.1 > best.1 { c } else { best },
            );
        let confidence = obj * cls;
        if !(confidence >= cfg.conf_threshold) {
            continue;
        }
        let (row, col) = ((cell / g) as f64, (cell % g) as f64);
        let cx = (col + 0.5 + at(0)) * s;
        let cy = (row + 0.5 + at(1)) * s;
        let w = cfg.anchor * at(2).min(MAX_SIZE_LOGIT).exp();
        let h = cfg.anchor * at(3).min(MAX_SIZE_LOGIT).exp();
        let bbox = [
            (cx - w / 2.0).clamp(0.0, size),
            (cy - h / 2.0).clamp(0.0, size),
            (cx + w / 2.0).clamp(0.0, size),
            (cy + h / 2.0).clamp(0.0, size),
        ];
        if !bbox.iter().all(|v| v.is_finite()) || bbox[2] <= bbox[0] || bbox[3] <= bbox[1] {
            continue;
        }
        out.push(BoxDet {
            image_id,
            class_id,
            bbox,
            confidence,
        });
    }
    out
}

/// Greedy per-class NMS: visit boxes by confidence (stable), drop any whose
/// IoU with an already kept box of the same class exceeds `iou_threshold`.
pub fn nms(mut boxes: Vec<BoxDet>, iou_threshold: f64) -> Vec<BoxDet> {
    boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<BoxDet> = Vec::with_capacity(boxes.len());
    for b in boxes {
        let suppressed = kept.iter().any(|k| {
            k.image_id == b.image_id
                && k.class_id == b.class_id
                && iou(&k.bbox, &b.bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(b);
        }
    }
    kept
}

pub fn decode_and_nms(cfg: &ToyDetConfig, raw: &Tensor4, n: usize, image_id: usize) -> Vec<BoxDet> {
    nms(decode_cells(cfg, raw, n, image_id), cfg.nms_iou)
}
