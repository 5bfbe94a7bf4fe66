//! Regenerates `fixtures/yolov5s_like.json`.

use std::path::PathBuf;

use slimkit::graph::fixtures::{bundled_notes, yolov5s_like, YoloLikeConfig};
use slimkit::graph::io::to_bytes_with_notes;

fn main() -> slimkit::Result<()> {
    let model = yolov5s_like(&YoloLikeConfig::bundled());
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/yolov5s_like.json");
    let bytes = to_bytes_with_notes(&model, Some(&bundled_notes()))?;
    slimkit::fsutil::write_atomic(&path, &bytes)?;
    println!("wrote {} ({} bytes)", path.display(), bytes.len());
    Ok(())
}
