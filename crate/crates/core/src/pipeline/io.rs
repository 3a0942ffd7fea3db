//! PNG rasters, the dataset manifest and sample loading.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_ops::{BinaryMask, InstanceLabelMap, Sample};
use crate::tensor::{Shape, Tensor};

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn encode_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn depth_name(img: &DynamicImage) -> String {
    format!("{:?}", img.color())
}

/// Writes a `1 x 3 x H x W` tensor with values in `[0, 1]` as 8-bit RGB.
pub fn save_image(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.n() != 1 || s.c() != 3 {
        return Err(Error::shape(format!("expected a 1x3xHxW image, got {s}")));
    }
    let (h, w) = (s.h(), s.w());
    let plane = h * w;
    let d = image.data();
    let mut buf = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            buf.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let img = RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size");
    img.save(path).map_err(encode_err(path))
}

/// Converts interleaved RGB bytes into a `1 x 3 x H x W` tensor in `[0, 1]`.
pub fn rgb_to_tensor(h: usize, w: usize, rgb: &[u8]) -> Result<Tensor> {
    let plane = h * w;
    if rgb.len() != 3 * plane {
        return Err(Error::Extent(format!(
            "{} bytes for a {h}x{w} RGB image",
            rgb.len()
        )));
    }
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(Shape::new(1, 3, h, w), data)
}

/// Reads an 8-bit image (grey, grey+alpha, RGB or RGBA) as RGB.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = decode(path)?;
    let rgb = match img {
        DynamicImage::ImageRgb8(i) => i,
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(Error::BitDepth {
                path: path.to_path_buf(),
                detail: format!("expected 8-bit channels, found {}", depth_name(&other)),
            })
        }
    };
    let (w, h) = rgb.dimensions();
    rgb_to_tensor(h as usize, w as usize, rgb.as_raw())
}

/// Writes a mask as 8-bit grey, 0 and 255.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let buf = mask
        .data()
        .iter()
        .map(|&v| if v != 0 { 255 } else { 0 })
        .collect();
    let img =
        GrayImage::from_raw(mask.width() as u32, mask.height() as u32, buf).expect("buffer size");
    img.save(path).map_err(encode_err(path))
}

/// Reads an 8-bit grey mask; only 0 and 255 are accepted.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = decode(path)?;
    let DynamicImage::ImageLuma8(grey) = img else {
        return Err(Error::BitDepth {
            path: path.to_path_buf(),
            detail: format!("expected 8-bit grey, found {}", depth_name(&img)),
        });
    };
    let (w, h) = grey.dimensions();
    let mut data = Vec::with_capacity(grey.as_raw().len());
    for &v in grey.as_raw() {
        match v {
            0 => data.push(0),
            255 => data.push(1),
            other => {
                return Err(Error::Data(format!(
                    "{}: mask value {other} is neither 0 nor 255",
                    path.display()
                )))
            }
        }
    }
    BinaryMask::new(h as usize, w as usize, data)
}

/// Writes an instance map as 16-bit grey, pixel value = id.
pub fn save_labels(path: &Path, labels: &InstanceLabelMap) -> Result<()> {
    if labels.count() > u16::MAX as u32 {
        return Err(Error::Data(format!(
            "{} instances do not fit a 16-bit label map",
            labels.count()
        )));
    }
    let buf: Vec<u16> = labels.data().iter().map(|&v| v as u16).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(labels.width() as u32, labels.height() as u32, buf)
            .expect("buffer size");
    img.save(path).map_err(encode_err(path))
}

/// Reads a 16-bit grey instance map and relabels its ids to `1..=K`.
pub fn load_labels(path: &Path) -> Result<InstanceLabelMap> {
    let img = decode(path)?;
    let DynamicImage::ImageLuma16(grey) = img else {
        return Err(Error::BitDepth {
            path: path.to_path_buf(),
            detail: format!("expected 16-bit grey, found {}", depth_name(&img)),
        });
    };
    let (w, h) = grey.dimensions();
    let data = grey.as_raw().iter().map(|&v| v as u32).collect();
    InstanceLabelMap::relabeled(h as usize, w as usize, data)
}

/// Writes a probability map as 8-bit grey (`round(255 p)`).
pub fn save_probability(path: &Path, prob: &[f32], h: usize, w: usize) -> Result<()> {
    if prob.len() != h * w {
        return Err(Error::Extent(format!(
            "{} values for a {h}x{w} map",
            prob.len()
        )));
    }
    let buf = prob
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer size");
    img.save(path).map_err(encode_err(path))
}

/// Reads an 8-bit grey probability map, `v / 255`.
pub fn load_probability(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = decode(path)?;
    let DynamicImage::ImageLuma8(grey) = img else {
        return Err(Error::BitDepth {
            path: path.to_path_buf(),
            detail: format!("expected 8-bit grey, found {}", depth_name(&img)),
        });
    };
    let (w, h) = grey.dimensions();
    let prob = grey.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Ok((prob, h as usize, w as usize))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub image: PathBuf,
    pub labels: PathBuf,
    pub split: Split,
}

/// Dataset index. Relative paths are resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub patch_size: usize,
    pub seed: u64,
    pub records: Vec<Record>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Instance and foreground-pixel totals of one split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: Split,
    pub images: usize,
    pub instances: u64,
    pub foreground_pixels: u64,
}

impl Manifest {
    pub fn new(patch_size: usize, seed: u64, base_dir: impl Into<PathBuf>) -> Self {
        Manifest {
            patch_size,
            seed,
            records: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Rejects a record listed twice (same image or label file), since that
    /// would let one sample sit in two splits.
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::Data("manifest patch_size must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.image) || !seen.insert(&r.labels) {
                return Err(Error::Data(format!(
                    "manifest lists {} or {} more than once",
                    r.image.display(),
                    r.labels.display()
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.records(split).map(|r| self.load_sample(r)).collect()
    }

    pub fn load_sample(&self, record: &Record) -> Result<Sample> {
        load_sample(&self.resolve(&record.image), &self.resolve(&record.labels))
    }

    /// Per-split image, instance and foreground-pixel counts.
    pub fn summarize(&self) -> Result<Vec<SplitSummary>> {
        let mut out = Vec::new();
        for split in Split::ALL {
            let mut s = SplitSummary {
                split,
                images: 0,
                instances: 0,
                foreground_pixels: 0,
            };
            for r in self.records(split) {
                let labels = load_labels(&self.resolve(&r.labels))?;
                s.images += 1;
                s.instances += labels.count() as u64;
                s.foreground_pixels += labels.data().iter().filter(|&&v| v != 0).count() as u64;
            }
            out.push(s);
        }
        Ok(out)
    }
}

/// Decodes an image and its 16-bit instance map and derives the targets.
pub fn load_sample(image: &Path, labels: &Path) -> Result<Sample> {
    let img = load_image(image)?;
    let lab = load_labels(labels)?;
    let s = img.shape();
    if (s.h(), s.w()) != (lab.height(), lab.width()) {
        return Err(Error::Extent(format!(
            "{} is {}x{} but {} is {}x{}",
            image.display(),
            s.h(),
            s.w(),
            labels.display(),
            lab.height(),
            lab.width()
        )));
    }
    Sample::from_labels(img, lab, 0)
}

/// Writes the image and instance map of a sample.
pub fn save_sample(sample: &Sample, image: &Path, labels: &Path) -> Result<()> {
    save_image(image, &sample.image)?;
    save_labels(labels, &sample.labels)
}
