//! Synthetic shape scenes: flat background, optional clutter and noise, one
//! to a few non-overlapping filled shapes with tight pixel boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Bbox;
use crate::seeds::child_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub image_size: usize,
    pub classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Background clutter density in [0, 1].
    pub clutter: f64,
    /// Standard deviation of additive pixel noise, in 8-bit units.
    pub noise_sigma: f64,
    pub min_object_size: usize,
    pub max_object_size: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: 96,
            classes: 4,
            min_objects: 1,
            max_objects: 3,
            clutter: 0.2,
            noise_sigma: 4.0,
            min_object_size: 16,
            max_object_size: 32,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::Config(format!(
                "image size must be >= 32, got {}",
                self.image_size
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::Config(format!(
                "objects per image must satisfy 1 <= min <= max, got {}..{}",
                self.min_objects, self.max_objects
            )));
        }
        if !(0.0..=1.0).contains(&self.clutter) {
            return Err(Error::Config(format!(
                "clutter must lie in [0,1], got {}",
                self.clutter
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.min_object_size < 6
            || self.min_object_size > self.max_object_size
            || self.max_object_size > self.image_size / 2
        {
            return Err(Error::Config(format!(
                "object sizes {}..{} must satisfy 6 <= min <= max <= image/2",
                self.min_object_size, self.max_object_size
            )));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(shape_name).collect()
    }
}

pub fn shape_name(class_id: usize) -> String {
    match class_id {
        0 => "square".into(),
        1 => "disk".into(),
        2 => "triangle".into(),
        3 => "cross".into(),
        4 => "diamond".into(),
        5 => "ring".into(),
        k => format!("polygon{}", k - 1),
    }
}

/// Membership test in shape-local coordinates, `u, v ∈ [-1, 1]`.
pub fn shape_contains(class_id: usize, u: f64, v: f64) -> bool {
    match class_id {
        0 => u.abs() <= 0.85 && v.abs() <= 0.85,
        1 => u * u + v * v <= 1.0,
        2 => v <= 1.0 && u.abs() <= (v + 1.0) / 2.0,
        3 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
        4 => u.abs() + v.abs() <= 1.0,
        5 => {
            let r2 = u * u + v * v;
            (0.3..=1.0).contains(&r2)
        }
        k => {
            let n = (k - 1) as f64;
            let r = (u * u + v * v).sqrt();
            let a = v.atan2(u);
            let sector = std::f64::consts::TAU / n;
            let local = (a.rem_euclid(sector)) - sector / 2.0;
            r * local.cos() <= (sector / 2.0).cos()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_id: usize,
    /// Tight pixel box `[x1, y1, x2, y2)` over the painted pixels.
    pub bbox: Bbox,
}

/// One RGB image, row-major HWC bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub size: usize,
    pub pixels: Vec<u8>,
    pub background: [u8; 3],
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.size + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

fn overlaps(a: &[usize; 4], b: &[usize; 4], margin: usize) -> bool {
    a[0] < b[2] + margin && b[0] < a[2] + margin && a[1] < b[3] + margin && b[1] < a[3] + margin
}

/// Render one scene from its own RNG.
pub fn render_scene(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Scene {
    let n = cfg.image_size;
    let mut canvas = vec![0.0f64; n * n * 3];
    let bg = [
        rng.gen_range(10..70u8),
        rng.gen_range(10..70u8),
        rng.gen_range(10..70u8),
    ];
    for px in canvas.chunks_mut(3) {
        for c in 0..3 {
            px[c] = bg[c] as f64;
        }
    }

    let clutter_count = (cfg.clutter * 30.0).round() as usize;
    for _ in 0..clutter_count {
        let w = rng.gen_range(1..=3usize);
        let h = rng.gen_range(1..=3usize);
        let x0 = rng.gen_range(0..n - w);
        let y0 = rng.gen_range(0..n - h);
        let col: [f64; 3] = std::array::from_fn(|_| rng.gen_range(60.0..200.0));
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let i = (y * n + x) * 3;
                canvas[i..i + 3].copy_from_slice(&col);
            }
        }
    }

    let count = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut placed: Vec<[usize; 4]> = Vec::new();
    let mut objects = Vec::new();
    for _ in 0..count {
        let class_id = rng.gen_range(0..cfg.classes);
        let mut spot = None;
        for _ in 0..60 {
            let s = rng.gen_range(cfg.min_object_size..=cfg.max_object_size);
            let x0 = rng.gen_range(0..=n - s);
            let y0 = rng.gen_range(0..=n - s);
            let cand = [x0, y0, x0 + s, y0 + s];
            if placed.iter().all(|p| !overlaps(p, &cand, 2)) {
                spot = Some(cand);
                break;
            }
        }
        let Some(r) = spot else { continue };
        placed.push(r);
        let half = (r[2] - r[0]) as f64 / 2.0;
        let (cx, cy) = (r[0] as f64 + half, r[1] as f64 + half);
        let col: [f64; 3] = std::array::from_fn(|_| rng.gen_range(130.0..=255.0));
        let mut tight = [usize::MAX, usize::MAX, 0, 0];
        for y in r[1]..r[3] {
            for x in r[0]..r[2] {
                let u = (x as f64 + 0.5 - cx) / half;
                let v = (y as f64 + 0.5 - cy) / half;
                if shape_contains(class_id, u, v) {
                    let i = (y * n + x) * 3;
                    canvas[i..i + 3].copy_from_slice(&col);
                    tight = [
                        tight[0].min(x),
                        tight[1].min(y),
                        tight[2].max(x + 1),
                        tight[3].max(y + 1),
                    ];
                }
            }
        }
        if tight[0] == usize::MAX {
            continue;
        }
        objects.push(SceneObject {
            class_id,
            bbox: tight.map(|v| v as f64),
        });
    }

    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        for v in canvas.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    let pixels = canvas
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    Scene {
        size: n,
        pixels,
        background: bg,
        objects,
    }
}

/// Deterministic scene `index` of `split`, independent of every other scene.
pub fn scene_at(cfg: &SceneConfig, split: &str, index: usize) -> Scene {
    let base = child_seed(cfg.seed, "data");
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(base, &format!("{split}/{index}")));
    render_scene(cfg, &mut rng)
}

pub fn generate_split(cfg: &SceneConfig, split: &str, count: usize) -> Vec<Scene> {
    (0..count)
        .into_par_iter()
        .map(|i| scene_at(cfg, split, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_scene_boxes_are_tight() {
        let cfg = SceneConfig {
            clutter: 0.0,
            noise_sigma: 0.0,
            seed: 3,
            ..Default::default()
        };
        for i in 0..20 {
            let s = scene_at(&cfg, "train", i);
            assert!(!s.objects.is_empty());
            let inside = |x: usize, y: usize| {
                s.objects.iter().any(|o| {
                    (x as f64) >= o.bbox[0]
                        && (x as f64) < o.bbox[2]
                        && (y as f64) >= o.bbox[1]
                        && (y as f64) < o.bbox[3]
                })
            };
            for y in 0..s.size {
                for x in 0..s.size {
                    if s.pixel(x, y) != s.background {
                        assert!(inside(x, y), "stray pixel at {x},{y}");
                    }
                }
            }
            for o in &s.objects {
                let [x1, y1, x2, y2] = o.bbox.map(|v| v as usize);
                let fg = |x: usize, y: usize| s.pixel(x, y) != s.background;
                assert!((x1..x2).any(|x| fg(x, y1)));
                assert!((x1..x2).any(|x| fg(x, y2 - 1)));
                assert!((y1..y2).any(|y| fg(x1, y)));
                assert!((y1..y2).any(|y| fg(x2 - 1, y)));
            }
        }
    }

    #[test]
    fn shapes_are_distinct() {
        let grid: Vec<Vec<bool>> = (0..8)
            .map(|k| {
                (0..400)
                    .map(|i| {
                        let u = (i % 20) as f64 / 10.0 - 0.95;
                        let v = (i / 20) as f64 / 10.0 - 0.95;
                        shape_contains(k, u, v)
                    })
                    .collect()
            })
            .collect();
        for a in 0..grid.len() {
            for b in a + 1..grid.len() {
                assert_ne!(grid[a], grid[b], "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = [
            SceneConfig {
                image_size: 16,
                ..Default::default()
            },
            SceneConfig {
                classes: 1,
                ..Default::default()
            },
            SceneConfig {
                clutter: 1.5,
                ..Default::default()
            },
            SceneConfig {
                min_objects: 0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
