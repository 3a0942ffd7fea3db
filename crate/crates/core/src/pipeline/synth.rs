//! Synthetic parking-lot scenes: axis-aligned rectangles on a textured
//! background, some of them placed in edge-sharing pairs.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{save_sample, Manifest, Record, Split};
use crate::error::{Error, Result};
use crate::mask_ops::{InstanceLabelMap, Sample};
use crate::pipeline::io::rgb_to_tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Total number of instances, including both members of every pair.
    pub count: usize,
    /// Pairs of instances that share one full edge.
    pub touching_pairs: usize,
    /// Darken a band of background below and right of every instance.
    pub shadow: bool,
    pub min_side: usize,
    pub max_side: usize,
    /// Minimum Chebyshev distance between instances that are not a pair.
    pub gap: usize,
    /// Placement attempts per instance or pair before giving up.
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 128,
            width: 128,
            count: 16,
            touching_pairs: 4,
            shadow: true,
            min_side: 8,
            max_side: 20,
            gap: 1,
            max_attempts: 500,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if 2 * self.touching_pairs > self.count {
            return Err(Error::Config(format!(
                "{} touching pairs need at least {} instances, count is {}",
                self.touching_pairs,
                2 * self.touching_pairs,
                self.count
            )));
        }
        if self.min_side == 0 || self.min_side > self.max_side {
            return Err(Error::Config(format!(
                "side range {}..={} is empty",
                self.min_side, self.max_side
            )));
        }
        let room = if self.touching_pairs > 0 {
            2 * self.max_side
        } else {
            self.max_side
        };
        if self.count > 0 && (room > self.height || room > self.width) {
            return Err(Error::Config(format!(
                "rectangles up to {room} px do not fit a {}x{} canvas",
                self.height, self.width
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

struct Canvas {
    h: usize,
    w: usize,
    ids: Vec<u32>,
}

impl Canvas {
    /// True when no instance lies within `gap` of `r`.
    fn free(&self, r: Rect, gap: usize) -> bool {
        let y0 = r.y.saturating_sub(gap);
        let x0 = r.x.saturating_sub(gap);
        let y1 = (r.y + r.h + gap).min(self.h);
        let x1 = (r.x + r.w + gap).min(self.w);
        (y0..y1).all(|y| {
            self.ids[y * self.w + x0..y * self.w + x1]
                .iter()
                .all(|&v| v == 0)
        })
    }

    fn paint(&mut self, r: Rect, id: u32) {
        for y in r.y..r.y + r.h {
            self.ids[y * self.w + r.x..y * self.w + r.x + r.w].fill(id);
        }
    }
}

fn side(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> usize {
    rng.random_range(cfg.min_side..=cfg.max_side)
}

fn random_rect(rng: &mut ChaCha8Rng, cfg: &SceneConfig, h: usize, w: usize) -> Rect {
    Rect {
        y: rng.random_range(0..=cfg.height - h),
        x: rng.random_range(0..=cfg.width - w),
        h,
        w,
    }
}

/// Two rectangles sharing one full edge of the first.
fn random_pair(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> (Rect, Rect) {
    let (ah, aw) = (side(rng, cfg), side(rng, cfg));
    let other = side(rng, cfg);
    if rng.random_bool(0.5) {
        // side by side, B's height equals A's
        let union = random_rect(rng, cfg, ah, aw + other);
        let (a, b) = (
            Rect { w: aw, ..union },
            Rect {
                x: union.x + aw,
                w: other,
                ..union
            },
        );
        if rng.random_bool(0.5) {
            (a, b)
        } else {
            (
                Rect {
                    x: union.x + other,
                    ..a
                },
                Rect { x: union.x, ..b },
            )
        }
    } else {
        let union = random_rect(rng, cfg, ah + other, aw);
        let (a, b) = (
            Rect { h: ah, ..union },
            Rect {
                y: union.y + ah,
                h: other,
                ..union
            },
        );
        if rng.random_bool(0.5) {
            (a, b)
        } else {
            (
                Rect {
                    y: union.y + other,
                    ..a
                },
                Rect { y: union.y, ..b },
            )
        }
    }
}

/// Places all rectangles; returns the id map and the rectangles in id order.
pub fn place_rectangles(
    cfg: &SceneConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(InstanceLabelMap, Vec<Rect>)> {
    cfg.validate()?;
    let mut canvas = Canvas {
        h: cfg.height,
        w: cfg.width,
        ids: vec![0; cfg.height * cfg.width],
    };
    let mut rects = Vec::with_capacity(cfg.count);
    for p in 0..cfg.touching_pairs {
        let placed = (0..cfg.max_attempts).find_map(|_| {
            let (a, b) = random_pair(rng, cfg);
            (canvas.free(a, cfg.gap) && canvas.free(b, cfg.gap)).then_some((a, b))
        });
        let (a, b) = placed.ok_or_else(|| {
            Error::Config(format!(
                "could not place touching pair {} after {} attempts",
                p + 1,
                cfg.max_attempts
            ))
        })?;
        for r in [a, b] {
            rects.push(r);
            canvas.paint(r, rects.len() as u32);
        }
    }
    for _ in 2 * cfg.touching_pairs..cfg.count {
        let placed = (0..cfg.max_attempts).find_map(|_| {
            let (h, w) = (side(rng, cfg), side(rng, cfg));
            let r = random_rect(rng, cfg, h, w);
            canvas.free(r, cfg.gap).then_some(r)
        });
        let r = placed.ok_or_else(|| {
            Error::Config(format!(
                "could not place instance {} after {} attempts",
                rects.len() + 1,
                cfg.max_attempts
            ))
        })?;
        rects.push(r);
        canvas.paint(r, rects.len() as u32);
    }
    let labels = InstanceLabelMap::new(cfg.height, cfg.width, canvas.ids)?;
    Ok((labels, rects))
}

fn noise(rng: &mut ChaCha8Rng, amp: i32) -> i32 {
    rng.random_range(-amp..=amp)
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// A colour at least `min_dist` (Euclidean, 0..255 scale) from `bg`.
fn vehicle_colour(rng: &mut ChaCha8Rng, bg: [f64; 3], min_dist: f64) -> [f64; 3] {
    loop {
        let c = [0; 3].map(|_| rng.random_range(0..=255) as f64);
        let d: f64 = c.iter().zip(&bg).map(|(a, b)| (a - b) * (a - b)).sum();
        if d.sqrt() >= min_dist {
            return c;
        }
    }
}

/// Renders one scene. The image is `1 x 3 x H x W` with values `k / 255`.
pub fn synth_scene(cfg: &SceneConfig, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (labels, rects) = place_rectangles(cfg, &mut rng)?;
    let (h, w) = (cfg.height, cfg.width);

    // Background: a grey base with two low-frequency waves and pixel noise.
    let base = rng.random_range(70.0..140.0);
    let tint = [0; 3].map(|_| rng.random_range(-12.0..12.0));
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.02..0.12),
                rng.random_range(0.02..0.12),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(4.0..12.0),
            )
        })
        .collect();
    let mut rgb = vec![[0.0f64; 3]; h * w];
    for y in 0..h {
        for x in 0..w {
            let t: f64 = waves
                .iter()
                .map(|&(fy, fx, ph, amp)| amp * (fy * y as f64 + fx * x as f64 + ph).sin())
                .sum();
            let n = noise(&mut rng, 6) as f64;
            rgb[y * w + x] = [0, 1, 2].map(|c| base + tint[c] + t + n);
        }
    }

    if cfg.shadow {
        for r in &rects {
            let depth = rng.random_range(2..=4usize);
            let y1 = (r.y + r.h + depth).min(h);
            let x1 = (r.x + r.w + depth).min(w);
            for y in r.y + 1..y1 {
                for x in r.x + 1..x1 {
                    let i = y * w + x;
                    if labels.data()[i] == 0 {
                        rgb[i] = rgb[i].map(|v| v * 0.55);
                    }
                }
            }
        }
    }

    let bg = [0, 1, 2].map(|c| base + tint[c]);
    for (k, r) in rects.iter().enumerate() {
        let id = k as u32 + 1;
        let colour = vehicle_colour(&mut rng, bg, 60.0);
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                let i = y * w + x;
                debug_assert_eq!(labels.data()[i], id);
                let n = noise(&mut rng, 8) as f64;
                rgb[i] = colour.map(|v| v + n);
            }
        }
    }

    let bytes: Vec<u8> = rgb.iter().flat_map(|p| p.map(to_u8)).collect();
    Sample::from_labels(rgb_to_tensor(h, w, &bytes)?, labels, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scene: SceneConfig::default(),
            train: 200,
            val: 0,
            test: 50,
            seed: 0,
        }
    }
}

/// Generates every scene of a dataset in manifest order, with its split.
pub fn synth_samples(cfg: &DatasetConfig) -> Result<Vec<(Split, Sample)>> {
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.train + cfg.val + cfg.test);
    for (split, n) in [
        (Split::Train, cfg.train),
        (Split::Val, cfg.val),
        (Split::Test, cfg.test),
    ] {
        for _ in 0..n {
            out.push((split, synth_scene(&cfg.scene, seeds.next_u64())?));
        }
    }
    Ok(out)
}

/// Writes a generated dataset under `dir` (`images/`, `labels/`,
/// `manifest.json`) and returns the manifest.
pub fn synth_dataset(dir: &Path, cfg: &DatasetConfig) -> Result<Manifest> {
    for sub in ["images", "labels"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let patch = cfg.scene.height.min(cfg.scene.width);
    let mut manifest = Manifest::new(patch, cfg.seed, dir);
    let mut counters = [0usize; 3];
    for (split, sample) in synth_samples(cfg)? {
        let k = &mut counters[split as usize];
        let name = format!("{}_{:04}.png", split.name(), *k);
        *k += 1;
        let rec = Record {
            image: Path::new("images").join(&name),
            labels: Path::new("labels").join(&name),
            split,
        };
        save_sample(&sample, &dir.join(&rec.image), &dir.join(&rec.labels))?;
        manifest.records.push(rec);
    }
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
