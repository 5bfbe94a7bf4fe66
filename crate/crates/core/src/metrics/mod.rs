//! Detection evaluation: IoU, greedy matching, precision/recall/F-score,
//! 101-point interpolated AP and mAP over IoU 0.50:0.05:0.95.

pub mod labels;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `(x1, y1, x2, y2)` in pixels.
pub type Bbox = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDet {
    pub image_id: usize,
    pub class_id: usize,
    pub bbox: Bbox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: usize,
    pub class_id: usize,
    pub bbox: Bbox,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub counts: MatchCounts,
    /// True-positive flag per detection, in input order.
    pub tp_flags: Vec<bool>,
}

/// Confidence cut applied to the dataset-level precision/recall.
pub const PR_CONFIDENCE: f64 = 0.25;
/// IoU threshold for the dataset-level precision/recall and mAP50.
pub const PR_IOU: f64 = 0.5;

/// 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

fn area(b: &Bbox) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

/// Intersection over union; 0 for disjoint or zero-area boxes.
pub fn iou(a: &Bbox, b: &Bbox) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Indices sorted by confidence descending, ties in input order.
fn by_confidence(dets: &[BoxDet]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Greedy one-to-one matching. Detections are visited by confidence and
/// each takes the highest-IoU unmatched ground truth of the same image and
/// class with IoU ≥ `iou_threshold` (lowest index on ties).
pub fn match_detections(dets: &[BoxDet], gts: &[GroundTruth], iou_threshold: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for d in by_confidence(dets) {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.image_id != det.image_id || gt.class_id != det.class_id {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            flags[d] = true;
        }
    }
    let tp = flags.iter().filter(|f| **f).count();
    MatchResult {
        counts: MatchCounts {
            tp,
            fp: dets.len() - tp,
            fn_: gts.len() - tp,
        },
        tp_flags: flags,
    }
}

/// (precision, recall, F-score); zero denominators give 0.
pub fn prf(c: MatchCounts) -> (f64, f64, f64) {
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    (p, r, f_score(p, r))
}

/// Harmonic mean of precision and recall.
pub fn f_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// 101-point interpolated AP from `(confidence, is_tp)` pairs.
///
/// Returns `None` when there is neither ground truth nor any detection, so
/// the class drops out of the mean. With detections but no ground truth the
/// AP is 0.
pub fn average_precision(scored: &[(f64, bool)], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return if scored.is_empty() { None } else { Some(0.0) };
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    // (cumulative tp, precision) at each rank
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (rank, &i) in order.iter().enumerate() {
        if scored[i].1 {
            tp += 1;
        }
        curve.push((tp, tp as f64 / (rank + 1) as f64));
    }
    // precision envelope from the right
    let mut envelope = vec![0.0; curve.len()];
    let mut running = 0.0f64;
    for k in (0..curve.len()).rev() {
        running = running.max(curve[k].1);
        envelope[k] = running;
    }
    let mut sum = 0.0;
    let mut k = 0;
    for r in 0..=100usize {
        // first rank whose recall tp/gt reaches r/100, compared exactly
        while k < curve.len() && 100 * curve[k].0 < r * gt_count {
            k += 1;
        }
        if k < curve.len() {
            sum += envelope[k];
        }
    }
    Some(sum / 101.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub thresholds: Vec<f64>,
    /// `[class][threshold]`; `None` when the class had nothing to score.
    pub per_class_ap: Vec<Vec<Option<f64>>>,
    /// mAP at each threshold.
    pub map_per_threshold: Vec<f64>,
    pub map50: f64,
    pub map50_95: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub counts: MatchCounts,
}

impl MetricsReport {
    pub fn render(&self, class_names: &[String]) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "P {:.2}%  R {:.2}%  F1 {:.2}%  mAP50 {:.2}%  mAP50-95 {:.2}%\n",
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f_score,
            100.0 * self.map50,
            100.0 * self.map50_95
        ));
        for (c, aps) in self.per_class_ap.iter().enumerate() {
            let name = class_names
                .get(c)
                .cloned()
                .unwrap_or_else(|| format!("class{c}"));
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
            let mean: Vec<f64> = aps.iter().flatten().copied().collect();
            let avg = (!mean.is_empty()).then(|| mean.iter().sum::<f64>() / mean.len() as f64);
            s.push_str(&format!(
                "  {name:<12} AP50 {:>6}  AP50-95 {:>6}\n",
                fmt(aps[0]),
                fmt(avg)
            ));
        }
        s
    }
}

/// Full evaluation at the given IoU thresholds (the first is the one
/// reported as mAP50 and used for P/R/F).
pub fn map_range(
    dets: &[BoxDet],
    gts: &[GroundTruth],
    num_classes: usize,
    thresholds: &[f64],
) -> Result<MetricsReport> {
    if thresholds.is_empty() {
        return Err(Error::Input(
            "at least one IoU threshold is required".into(),
        ));
    }
    for d in dets {
        if d.class_id >= num_classes {
            return Err(Error::Input(format!(
                "detection class {} >= {num_classes}",
                d.class_id
            )));
        }
        if !d.bbox.iter().all(|v| v.is_finite()) || !d.confidence.is_finite() {
            return Err(Error::Input("detection with non-finite values".into()));
        }
    }
    for g in gts {
        if g.class_id >= num_classes {
            return Err(Error::Input(format!(
                "ground-truth class {} >= {num_classes}",
                g.class_id
            )));
        }
    }
    let mut per_class_ap = vec![Vec::with_capacity(thresholds.len()); num_classes];
    let mut map_per_threshold = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let m = match_detections(dets, gts, t);
        let mut sum = 0.0;
        let mut n = 0usize;
        for (c, row) in per_class_ap.iter_mut().enumerate() {
            let scored: Vec<(f64, bool)> = dets
                .iter()
                .zip(&m.tp_flags)
                .filter(|(d, _)| d.class_id == c)
                .map(|(d, f)| (d.confidence, *f))
                .collect();
            let gt_count = gts.iter().filter(|g| g.class_id == c).count();
            let ap = average_precision(&scored, gt_count);
            if let Some(v) = ap {
                sum += v;
                n += 1;
            }
            row.push(ap);
        }
        map_per_threshold.push(if n == 0 { 0.0 } else { sum / n as f64 });
    }
    let confident: Vec<BoxDet> = dets
        .iter()
        .filter(|d| d.confidence >= PR_CONFIDENCE)
        .cloned()
        .collect();
    let counts = match_detections(&confident, gts, PR_IOU).counts;
    let (precision, recall, f) = prf(counts);
    Ok(MetricsReport {
        num_classes,
        thresholds: thresholds.to_vec(),
        per_class_ap,
        map50: map_per_threshold[0],
        map50_95: map_per_threshold.iter().sum::<f64>() / map_per_threshold.len() as f64,
        map_per_threshold,
        precision,
        recall,
        f_score: f,
        counts,
    })
}

/// [`map_range`] over 0.50:0.05:0.95.
pub fn evaluate(dets: &[BoxDet], gts: &[GroundTruth], num_classes: usize) -> Result<MetricsReport> {
    map_range(dets, gts, num_classes, &coco_thresholds())
}
