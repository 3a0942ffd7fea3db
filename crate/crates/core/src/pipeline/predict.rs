//! Sliding-window inference and instance extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_ops::{
    connected_components, tile_origins, BinaryMask, Connectivity, InstanceLabelMap,
};
use crate::model::Model;
use crate::tensor::{Graph, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    /// Window edge; must be a multiple of 32.
    pub patch: usize,
    /// Pixels shared by neighbouring windows.
    pub overlap: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            patch: 256,
            overlap: 32,
        }
    }
}

/// Per-pixel probabilities, row-major `h x w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Probabilities {
    pub height: usize,
    pub width: usize,
    pub seg: Vec<f32>,
    pub boundary: Option<Vec<f32>>,
}

fn window(image: &Tensor, y0: usize, x0: usize, size: usize) -> Tensor {
    let s = image.shape();
    let (h, w) = (s.h(), s.w());
    let mut data = Vec::with_capacity(s.c() * size * size);
    for plane in image.data().chunks(h * w) {
        for y in y0..y0 + size {
            data.extend_from_slice(&plane[y * w + x0..y * w + x0 + size]);
        }
    }
    Tensor::new(Shape::new(1, s.c(), size, size), data).expect("window extent")
}

/// Runs the model over `patch x patch` windows spaced `patch - overlap`
/// apart (last row and column clamped to the edge) and averages the
/// overlapping probabilities with equal weights.
pub fn predict(model: &Model, image: &Tensor, cfg: &PredictConfig) -> Result<Probabilities> {
    let s = image.shape();
    if s.n() != 1 {
        return Err(Error::shape(format!("predict takes one image, got {s}")));
    }
    if cfg.overlap >= cfg.patch {
        return Err(Error::Config(format!(
            "overlap {} must be smaller than the patch {}",
            cfg.overlap, cfg.patch
        )));
    }
    let (h, w) = (s.h(), s.w());
    let stride = cfg.patch - cfg.overlap;
    let ys = tile_origins(h, cfg.patch, stride)?;
    let xs = tile_origins(w, cfg.patch, stride)?;
    let two = model.config().branches == 2;
    let mut seg = vec![0.0f32; h * w];
    let mut bnd = vec![0.0f32; if two { h * w } else { 0 }];
    let mut hits = vec![0u32; h * w];
    for &y0 in &ys {
        for &x0 in &xs {
            let mut g = Graph::new();
            let x = g.leaf(window(image, y0, x0, cfg.patch), false);
            let pred = model.forward(&mut g, x)?;
            let p = cfg.patch;
            let sp = g.value(pred.seg).data();
            let bp = pred.boundary.map(|b| g.value(b).data());
            for dy in 0..p {
                let row = (y0 + dy) * w + x0;
                for dx in 0..p {
                    seg[row + dx] += sp[dy * p + dx];
                    hits[row + dx] += 1;
                    if let Some(bp) = bp {
                        bnd[row + dx] += bp[dy * p + dx];
                    }
                }
            }
        }
    }
    for (v, &n) in seg.iter_mut().zip(&hits) {
        *v /= n as f32;
    }
    for (v, &n) in bnd.iter_mut().zip(&hits) {
        *v /= n as f32;
    }
    Ok(Probabilities {
        height: h,
        width: w,
        seg,
        boundary: two.then_some(bnd),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    /// Pixels with probability `>= threshold` are foreground.
    pub threshold: f32,
    /// 4 or 8.
    pub connectivity: u32,
    /// Remove predicted boundary pixels from the foreground before labelling.
    /// Post-processing beyond the plain network output; off by default.
    pub boundary_subtraction: bool,
    pub boundary_threshold: f32,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            threshold: 0.5,
            connectivity: 4,
            boundary_subtraction: false,
            boundary_threshold: 0.5,
        }
    }
}

/// Binarizes at `threshold` (inclusive).
pub fn binarize(prob: &[f32], h: usize, w: usize, threshold: f32) -> Result<BinaryMask> {
    BinaryMask::new(h, w, prob.iter().map(|&p| (p >= threshold) as u8).collect())
}

/// Thresholds the segmentation map and labels its connected regions.
pub fn extract_instances(probs: &Probabilities, cfg: &ExtractConfig) -> Result<InstanceLabelMap> {
    let connectivity = Connectivity::from_number(cfg.connectivity)?;
    let (h, w) = (probs.height, probs.width);
    let mut fg = binarize(&probs.seg, h, w, cfg.threshold)?;
    if cfg.boundary_subtraction {
        let b = probs.boundary.as_ref().ok_or_else(|| {
            Error::Config("boundary subtraction needs a boundary probability map".into())
        })?;
        for y in 0..h {
            for x in 0..w {
                if b[y * w + x] >= cfg.boundary_threshold {
                    fg.set(y, x, false);
                }
            }
        }
    }
    Ok(connected_components(&fg, connectivity))
}
