//! Detection loss: BCE on objectness at every cell, BCE on class scores and
//! squared error on box offsets at assigned cells, weights 1/1/5. The sum is
//! divided by `batch · grid²`, so the value is a per-cell mean.

use super::scene::SceneObject;
use super::toydet::{ToyDetConfig, BOX_CHANNELS, CLASS_OFFSET, OBJ_CHANNEL};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const OBJ_WEIGHT: f64 = 1.0;
pub const CLS_WEIGHT: f64 = 1.0;
pub const BOX_WEIGHT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub class_id: usize,
    /// `[tx, ty, tw, th]` regression targets.
    pub offsets: [f64; 4],
}

pub fn sigmoid(z: f64) -> f64 {
    crate::runtime::kernels::sigmoid(z)
}

/// `−[y·ln σ(z) + (1−y)·ln(1−σ(z))]`, computed without overflow.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

pub fn box_offsets(cfg: &ToyDetConfig, row: usize, col: usize, bbox: &[f64; 4]) -> [f64; 4] {
    let s = cfg.stride as f64;
    let cx = (bbox[0] + bbox[2]) / 2.0;
    let cy = (bbox[1] + bbox[3]) / 2.0;
    let w = (bbox[2] - bbox[0]).max(1e-6);
    let h = (bbox[3] - bbox[1]).max(1e-6);
    [
        cx / s - col as f64 - 0.5,
        cy / s - row as f64 - 0.5,
        (w / cfg.anchor).ln(),
        (h / cfg.anchor).ln(),
    ]
}

/// One target per cell, by object center. An object whose cell is taken
/// moves to the nearest free cell, ties broken in row-major order.
pub fn assign_targets(cfg: &ToyDetConfig, objects: &[SceneObject]) -> Vec<Option<CellTarget>> {
    let g = cfg.grid();
    let s = cfg.stride as f64;
    let mut cells: Vec<Option<CellTarget>> = vec![None; g * g];
    for o in objects {
        let cx = (o.bbox[0] + o.bbox[2]) / 2.0;
        let cy = (o.bbox[1] + o.bbox[3]) / 2.0;
        let home_col = ((cx / s).floor().max(0.0) as usize).min(g - 1);
        let home_row = ((cy / s).floor().max(0.0) as usize).min(g - 1);
        let idx = if cells[home_row * g + home_col].is_none() {
            Some(home_row * g + home_col)
        } else {
            (0..g * g)
                .filter(|i| cells[*i].is_none())
                .map(|i| {
                    let (r, c) = (i / g, i % g);
                    let d =
                        ((c as f64 + 0.5) * s - cx).powi(2) + ((r as f64 + 0.5) * s - cy).powi(2);
                    (d, i)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, i)| i)
        };
        if let Some(i) = idx {
            cells[i] = Some(CellTarget {
                class_id: o.class_id,
                offsets: box_offsets(cfg, i / g, i % g, &o.bbox),
            });
        }
    }
    cells
}

/// Loss over a batch of raw head outputs and the gradient with respect to
/// them.
pub fn det_loss(
    cfg: &ToyDetConfig,
    raw: &Tensor4,
    targets: &[&[SceneObject]],
) -> Result<(f64, Tensor4)> {
    let g = cfg.grid();
    let expect = [targets.len(), cfg.head_channels(), g, g];
    if raw.dims() != expect {
        return Err(Error::shape(
            "head",
            format!("loss expects head output {expect:?}, got {:?}", raw.dims()),
        ));
    }
    let plane = g * g;
    let n = (targets.len() * plane).max(1) as f64;
    let mut grad = Tensor4::zeros(raw.dims());
    let mut total = 0.0;
    for (b, objs) in targets.iter().enumerate() {
        let cells = assign_targets(cfg, objs);
        let x = raw.sample(b);
        let dx = grad.sample_mut(b);
        for (cell, t) in cells.iter().enumerate() {
            let at = |ch: usize| ch * plane + cell;
            let zo = x[at(OBJ_CHANNEL)];
            let yo = if t.is_some() { 1.0 } else { 0.0 };
            total += OBJ_WEIGHT * bce_with_logits(zo, yo);
            dx[at(OBJ_CHANNEL)] = OBJ_WEIGHT * (sigmoid(zo) - yo) / n;
            let Some(t) = t else { continue };
            for k in 0..cfg.classes {
                let z = x[at(CLASS_OFFSET + k)];
                let y = if k == t.class_id { 1.0 } else { 0.0 };
                total += CLS_WEIGHT * bce_with_logits(z, y);
                dx[at(CLASS_OFFSET + k)] = CLS_WEIGHT * (sigmoid(z) - y) / n;
            }
            for j in 0..BOX_CHANNELS {
                let d = x[at(j)] - t.offsets[j];
                total += BOX_WEIGHT * d * d;
                dx[at(j)] = BOX_WEIGHT * 2.0 * d / n;
            }
        }
    }
    Ok((total / n, grad))
}
