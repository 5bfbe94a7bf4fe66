//! Per-image label files: one `class_id cx cy w h [confidence]` line per
//! box, coordinates normalized to [0, 1].

use std::path::Path;

use super::{Bbox, BoxDet, GroundTruth};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelLine {
    pub class_id: usize,
    /// Pixel box.
    pub bbox: Bbox,
    pub confidence: Option<f64>,
}

pub fn parse_line(line: &str, width: usize, height: usize) -> Result<Option<LabelLine>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 && fields.len() != 6 {
        return Err(Error::Input(format!(
            "label line needs 5 or 6 fields: `{line}`"
        )));
    }
    let class_id: usize = fields[0]
        .parse()
        .map_err(|_| Error::Input(format!("bad class id in `{line}`")))?;
    let mut nums = [0.0f64; 5];
    for (k, f) in fields[1..].iter().enumerate() {
        nums[k] = f
            .parse()
            .map_err(|_| Error::Input(format!("bad number `{f}` in `{line}`")))?;
        if !nums[k].is_finite() {
            return Err(Error::Input(format!("non-finite value in `{line}`")));
        }
    }
    let (cx, cy, w, h) = (nums[0], nums[1], nums[2], nums[3]);
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::Input(format!("non-positive box size in `{line}`")));
    }
    let (iw, ih) = (width as f64, height as f64);
    Ok(Some(LabelLine {
        class_id,
        bbox: [
            (cx - w / 2.0) * iw,
            (cy - h / 2.0) * ih,
            (cx + w / 2.0) * iw,
            (cy + h / 2.0) * ih,
        ],
        confidence: (fields.len() == 6).then_some(nums[4]),
    }))
}

pub fn format_line(
    class_id: usize,
    bbox: &Bbox,
    width: usize,
    height: usize,
    confidence: Option<f64>,
) -> String {
    let (iw, ih) = (width as f64, height as f64);
    let cx = (bbox[0] + bbox[2]) / 2.0 / iw;
    let cy = (bbox[1] + bbox[3]) / 2.0 / ih;
    let w = (bbox[2] - bbox[0]) / iw;
    let h = (bbox[3] - bbox[1]) / ih;
    match confidence {
        Some(c) => format!("{class_id} {cx:.6} {cy:.6} {w:.6} {h:.6} {c:.6}"),
        None => format!("{class_id} {cx:.6} {cy:.6} {w:.6} {h:.6}"),
    }
}

pub fn parse_text(text: &str, width: usize, height: usize) -> Result<Vec<LabelLine>> {
    let mut out = Vec::new();
    for line in text.lines() {
        if let Some(l) = parse_line(line, width, height)? {
            out.push(l);
        }
    }
    Ok(out)
}

fn read(path: &Path, width: usize, height: usize) -> Result<Vec<LabelLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text(&text, width, height)
}

pub fn read_ground_truth(
    path: &Path,
    image_id: usize,
    width: usize,
    height: usize,
) -> Result<Vec<GroundTruth>> {
    Ok(read(path, width, height)?
        .into_iter()
        .map(|l| GroundTruth {
            image_id,
            class_id: l.class_id,
            bbox: l.bbox,
        })
        .collect())
}

/// Prediction files must carry a confidence on every line.
pub fn read_predictions(
    path: &Path,
    image_id: usize,
    width: usize,
    height: usize,
) -> Result<Vec<BoxDet>> {
    read(path, width, height)?
        .into_iter()
        .map(|l| {
            let confidence = l.confidence.ok_or_else(|| {
                Error::Input(format!("{}: prediction without confidence", path.display()))
            })?;
            Ok(BoxDet {
                image_id,
                class_id: l.class_id,
                bbox: l.bbox,
                confidence,
            })
        })
        .collect()
}
