//! In-memory datasets and their on-disk layout: `{split}/{index:06}.png`
//! with a sibling `.txt` label file, plus `manifest.json`.

use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{generate_split, Scene, SceneConfig, SceneObject};
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json_atomic};
use crate::metrics::labels::{format_line, parse_text};
use crate::metrics::GroundTruth;
use crate::tensor::Tensor4;

pub const DATASET_FORMAT: &str = "slimkit_dataset_v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub image_size: usize,
    pub class_names: Vec<String>,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// NCHW batch scaled to [0, 1].
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor4> {
        let n = self.image_size;
        let mut t = Tensor4::zeros([indices.len(), 3, n, n]);
        for (b, &i) in indices.iter().enumerate() {
            let scene = self
                .scenes
                .get(i)
                .ok_or_else(|| Error::Input(format!("image index {i} out of range")))?;
            let dst = t.sample_mut(b);
            for (p, px) in scene.pixels.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    dst[c * n * n + p] = px[c] as f64 / 255.0;
                }
            }
        }
        Ok(t)
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.scenes
            .iter()
            .enumerate()
            .flat_map(|(image_id, s)| {
                s.objects.iter().map(move |o| GroundTruth {
                    image_id,
                    class_id: o.class_id,
                    bbox: o.bbox,
                })
            })
            .collect()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for o in self.scenes.iter().flat_map(|s| &s.objects) {
            h[o.class_id] += 1;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub config: SceneConfig,
    pub train: Dataset,
    pub val: Dataset,
}

pub fn generate_dataset(cfg: &SceneConfig, n_train: usize, n_val: usize) -> Result<DatasetSplits> {
    cfg.validate()?;
    if n_train == 0 || n_val == 0 {
        return Err(Error::Config(
            "train and val splits need at least one image each".into(),
        ));
    }
    let make = |split: &str, count: usize| Dataset {
        image_size: cfg.image_size,
        class_names: cfg.class_names(),
        scenes: generate_split(cfg, split, count),
    };
    Ok(DatasetSplits {
        config: cfg.clone(),
        train: make("train", n_train),
        val: make("val", n_val),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub image: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub image_size: usize,
    pub classes: Vec<String>,
    pub scene: SceneConfig,
    pub train: Vec<SplitEntry>,
    pub val: Vec<SplitEntry>,
}

pub fn encode_png(scene: &Scene) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, scene.size as u32, scene.size as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Input(format!("png header: {e}")))?;
        w.write_image_data(&scene.pixels)
            .map_err(|e| Error::Input(format!("png encode: {e}")))?;
    }
    Ok(out)
}

pub fn decode_png(path: &Path) -> Result<(usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: png::DecodingError| Error::Input(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(file).read_info().map_err(bad)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Input(format!(
            "{}: expected 8-bit RGB",
            path.display()
        )));
    }
    if info.width != info.height {
        return Err(Error::Input(format!(
            "{}: images must be square",
            path.display()
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, buf))
}

pub fn label_text(scene: &Scene) -> String {
    scene
        .objects
        .iter()
        .map(|o| format_line(o.class_id, &o.bbox, scene.size, scene.size, None) + "\n")
        .collect()
}

fn write_split(dir: &Path, split: &str, data: &Dataset) -> Result<Vec<SplitEntry>> {
    let sub = dir.join(split);
    std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    data.scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let image = format!("{split}/{i:06}.png");
            let labels = format!("{split}/{i:06}.txt");
            write_atomic(&dir.join(&image), &encode_png(scene)?)?;
            write_atomic(&dir.join(&labels), label_text(scene).as_bytes())?;
            Ok(SplitEntry { image, labels })
        })
        .collect()
}

/// Writes images, labels and the manifest; returns the manifest path.
pub fn write_dataset(splits: &DatasetSplits, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        image_size: splits.config.image_size,
        classes: splits.train.class_names.clone(),
        scene: splits.config.clone(),
        train: write_split(dir, "train", &splits.train)?,
        val: write_split(dir, "val", &splits.val)?,
    };
    let path = dir.join("manifest.json");
    write_json_atomic(&path, &manifest)?;
    Ok(path)
}

fn read_split(root: &Path, manifest: &Manifest, entries: &[SplitEntry]) -> Result<Dataset> {
    let classes = manifest.classes.len();
    let scenes = entries
        .par_iter()
        .map(|e| {
            let (size, pixels) = decode_png(&root.join(&e.image))?;
            if size != manifest.image_size {
                return Err(Error::Input(format!(
                    "{}: size {size} != {}",
                    e.image, manifest.image_size
                )));
            }
            let lpath = root.join(&e.labels);
            let text = std::fs::read_to_string(&lpath).map_err(|err| Error::io(&lpath, err))?;
            let objects = parse_text(&text, size, size)?
                .into_iter()
                .map(|l| {
                    if l.class_id >= classes {
                        return Err(Error::Input(format!(
                            "{}: class {} out of range",
                            e.labels, l.class_id
                        )));
                    }
                    Ok(SceneObject {
                        class_id: l.class_id,
                        bbox: l.bbox,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let background = [pixels[0], pixels[1], pixels[2]];
            Ok(Scene {
                size,
                pixels,
                background,
                objects,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        image_size: manifest.image_size,
        class_names: manifest.classes.clone(),
        scenes,
    })
}

/// Load a dataset from its manifest file or the directory holding it.
pub fn read_dataset(path: &Path) -> Result<DatasetSplits> {
    let manifest_path = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::Input(format!(
            "{}: unknown dataset format `{}`",
            manifest_path.display(),
            manifest.format
        )));
    }
    Ok(DatasetSplits {
        config: manifest.scene.clone(),
        train: read_split(root, &manifest, &manifest.train)?,
        val: read_split(root, &manifest, &manifest.val)?,
    })
}
