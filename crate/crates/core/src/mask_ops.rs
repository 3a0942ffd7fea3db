//! Label-map algebra: connected components, boundary derivation, disk
//! erosion, flips and tiling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Per-pixel `{0, 1}` mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Extent(format!(
                "{} values for a {h}x{w} mask",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("mask value {v} is not binary")));
        }
        Ok(BinaryMask { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        BinaryMask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x) as u8);
            }
        }
        BinaryMask { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// `1 x 1 x h x w` tensor of 0.0 / 1.0.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| v as f32).collect();
        Tensor::new(Shape::new(1, 1, self.h, self.w), data).expect("mask extent")
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        BinaryMask {
            h,
            w,
            data: crop_plane(&self.data, self.w, y0, x0, h, w),
        }
    }

    /// Chebyshev dilation: a pixel is set if any pixel within `r` (max-norm) is set.
    pub fn dilate(&self, r: usize) -> Self {
        if r == 0 {
            return self.clone();
        }
        let (h, w) = (self.h, self.w);
        let mut rows = vec![0u8; h * w];
        for y in 0..h {
            let src = &self.data[y * w..(y + 1) * w];
            let dst = &mut rows[y * w..(y + 1) * w];
            running_or(src, dst, r);
        }
        let mut out = vec![0u8; h * w];
        let mut col = vec![0u8; h];
        let mut col_out = vec![0u8; h];
        for x in 0..w {
            for y in 0..h {
                col[y] = rows[y * w + x];
            }
            running_or(&col, &mut col_out, r);
            for y in 0..h {
                out[y * w + x] = col_out[y];
            }
        }
        BinaryMask { h, w, data: out }
    }
}

/// `dst[i] = any(src[i - r ..= i + r])`, clipped to the slice.
#[allow(clippy::needless_range_loop)]
fn running_or(src: &[u8], dst: &mut [u8], r: usize) {
    let n = src.len();
    let mut last_set: Option<usize> = None;
    // Forward pass tracks the most recent set index at or before `i + r`.
    let mut ahead = 0;
    for i in 0..n {
        while ahead < n && ahead <= i + r {
            if src[ahead] != 0 {
                last_set = Some(ahead);
            }
            ahead += 1;
        }
        dst[i] = matches!(last_set, Some(j) if j + r >= i) as u8;
    }
}

fn crop_plane<T: Copy>(data: &[T], w: usize, y0: usize, x0: usize, ch: usize, cw: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(ch * cw);
    for y in y0..y0 + ch {
        out.extend_from_slice(&data[y * w + x0..y * w + x0 + cw]);
    }
    out
}

/// Per-pixel instance ids, 0 = background.
///
/// Maps built by [`InstanceLabelMap::new`] have contiguous, non-empty ids
/// `1..=K`. Erosion keeps the original ids of surviving pixels, so an eroded
/// map may contain ids with no pixels; `count()` is then the largest id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InstanceLabelMap {
    h: usize,
    w: usize,
    data: Vec<u32>,
    count: u32,
}

impl InstanceLabelMap {
    /// Requires ids to be exactly `{0} ∪ 1..=K` with every id present.
    pub fn new(h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        let map = Self::with_gaps(h, w, data)?;
        let sizes = map.instance_sizes();
        if let Some(k) = sizes.iter().skip(1).position(|&s| s == 0) {
            return Err(Error::Data(format!(
                "instance ids are not contiguous: id {} is unused",
                k + 1
            )));
        }
        Ok(map)
    }

    /// Accepts any ids; `count()` is the maximum.
    pub fn with_gaps(h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Extent(format!(
                "{} values for a {h}x{w} label map",
                data.len()
            )));
        }
        let count = data.iter().copied().max().unwrap_or(0);
        Ok(InstanceLabelMap { h, w, data, count })
    }

    /// Maps arbitrary ids onto `1..=K`, preserving their numeric order.
    pub fn relabeled(h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        let mut ids: Vec<u32> = data.iter().copied().filter(|&v| v != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        let data = data
            .into_iter()
            .map(|v| {
                if v == 0 {
                    0
                } else {
                    ids.binary_search(&v).expect("collected id") as u32 + 1
                }
            })
            .collect();
        Self::new(h, w, data)
    }

    pub fn empty(h: usize, w: usize) -> Self {
        InstanceLabelMap {
            h,
            w,
            data: vec![0; h * w],
            count: 0,
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.w + x]
    }

    /// Largest id, `K`.
    pub fn count(&self) -> u32 {
        self.count
    }

    /// Pixel count per id, indexed `0..=K`.
    pub fn instance_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count as usize + 1];
        for &v in &self.data {
            sizes[v as usize] += 1;
        }
        sizes
    }

    pub fn foreground(&self) -> BinaryMask {
        BinaryMask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| (v != 0) as u8).collect(),
        }
    }

    /// Crops and relabels so the result is contiguous again.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        Self::relabeled(h, w, crop_plane(&self.data, self.w, y0, x0, h, w))
            .expect("crop of a valid map")
    }
}

/// Pixels excluded from scoring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IgnoreMask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl IgnoreMask {
    pub fn none(h: usize, w: usize) -> Self {
        IgnoreMask {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        IgnoreMask {
            h: mask.h,
            w: mask.w,
            data: mask.data.iter().map(|&v| v != 0).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn is_ignored(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    pub fn from_number(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::Config(format!(
                "connectivity must be 4 or 8, got {n}"
            ))),
        }
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Maximal connected foreground regions, labeled `1..=K` in the order their
/// first pixel appears in a row-major scan.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> InstanceLabelMap {
    let (h, w) = (mask.h, mask.w);
    let mut provisional = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            let mut look = |yy: usize, xx: usize| {
                let v = provisional[yy * w + xx];
                if v != 0 {
                    neighbors[n] = v;
                    n += 1;
                }
            };
            if x > 0 {
                look(y, x - 1);
            }
            if y > 0 {
                look(y - 1, x);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        look(y - 1, x - 1);
                    }
                    if x + 1 < w {
                        look(y - 1, x + 1);
                    }
                }
            }
            let label = if n == 0 {
                let id = parent.len() as u32;
                parent.push(id);
                id
            } else {
                let first = neighbors[0];
                for &other in &neighbors[1..n] {
                    union(&mut parent, first, other);
                }
                first
            };
            provisional[y * w + x] = label;
        }
    }
    let mut final_id = vec![0u32; parent.len()];
    let mut next = 0u32;
    for v in provisional.iter_mut() {
        if *v == 0 {
            continue;
        }
        let root = find(&mut parent, *v) as usize;
        if final_id[root] == 0 {
            next += 1;
            final_id[root] = next;
        }
        *v = final_id[root];
    }
    InstanceLabelMap {
        h,
        w,
        data: provisional,
        count: next,
    }
}

/// Foreground pixels with an 8-neighbor of a different id (outside the image
/// counts as background), optionally thickened by Chebyshev dilation.
pub fn instance_boundaries(labels: &InstanceLabelMap, dilate_r: usize) -> BinaryMask {
    let (h, w) = (labels.h, labels.w);
    let at = |y: isize, x: isize| -> u32 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0
        } else {
            labels.data[y as usize * w + x as usize]
        }
    };
    let edge = BinaryMask::from_fn(h, w, |y, x| {
        let v = labels.data[y * w + x];
        if v == 0 {
            return false;
        }
        let (y, x) = (y as isize, x as isize);
        (-1..=1).any(|dy| (-1..=1).any(|dx| at(y + dy, x + dx) != v))
    });
    edge.dilate(dilate_r)
}

/// Offsets `(dy, dx)` with `dx² + dy² <= r²`.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Disk erosion of every instance.
///
/// A foreground pixel survives iff every disk offset lands inside the image
/// on the same id; survivors keep their id. The ignore mask holds every
/// removed foreground pixel and every background pixel within the disk of
/// some foreground pixel.
pub fn erode_instances(labels: &InstanceLabelMap, radius: usize) -> (InstanceLabelMap, IgnoreMask) {
    let (h, w) = (labels.h, labels.w);
    let disk = disk_offsets(radius);
    let mut out = vec![0u32; h * w];
    let mut near_fg = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let v = labels.data[y * w + x];
            if v == 0 {
                continue;
            }
            let mut keep = true;
            for &(dy, dx) in &disk {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    keep = false;
                    continue;
                }
                let i = yy as usize * w + xx as usize;
                near_fg[i] = true;
                if labels.data[i] != v {
                    keep = false;
                }
            }
            if keep {
                out[y * w + x] = v;
            }
        }
    }
    let ignore = near_fg
        .iter()
        .zip(&out)
        .map(|(&near, &kept)| near && kept == 0)
        .collect();
    (
        InstanceLabelMap {
            h,
            w,
            data: out,
            count: labels.count,
        },
        IgnoreMask { h, w, data: ignore },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipMode {
    None,
    H,
    V,
    Hv,
}

impl FlipMode {
    pub const ALL: [FlipMode; 4] = [FlipMode::None, FlipMode::H, FlipMode::V, FlipMode::Hv];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FlipMode::None),
            "h" => Ok(FlipMode::H),
            "v" => Ok(FlipMode::V),
            "hv" => Ok(FlipMode::Hv),
            _ => Err(Error::Config(format!("unknown flip mode {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlipMode::None => "none",
            FlipMode::H => "h",
            FlipMode::V => "v",
            FlipMode::Hv => "hv",
        }
    }

    fn flips(self) -> (bool, bool) {
        match self {
            FlipMode::None => (false, false),
            FlipMode::H => (true, false),
            FlipMode::V => (false, true),
            FlipMode::Hv => (true, true),
        }
    }
}

/// Flips each `h x w` plane of `data` in place; `H` mirrors columns, `V` rows.
pub fn flip_planes<T: Copy>(data: &mut [T], h: usize, w: usize, mode: FlipMode) {
    let (fh, fv) = mode.flips();
    for plane in data.chunks_mut(h * w) {
        if fh {
            for row in plane.chunks_mut(w) {
                row.reverse();
            }
        }
        if fv {
            for y in 0..h / 2 {
                let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
                top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
            }
        }
    }
}

/// An image with its aligned annotation maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `1 x C x H x W`, values in `[0, 1]`.
    pub image: Tensor,
    pub seg: BinaryMask,
    pub boundary: BinaryMask,
    pub labels: InstanceLabelMap,
}

impl Sample {
    /// Derives the segmentation and boundary targets from an instance map.
    pub fn from_labels(image: Tensor, labels: InstanceLabelMap, dilate_r: usize) -> Result<Self> {
        let sample = Sample {
            seg: labels.foreground(),
            boundary: instance_boundaries(&labels, dilate_r),
            image,
            labels,
        };
        sample.check_aligned()?;
        Ok(sample)
    }

    pub fn height(&self) -> usize {
        self.image.shape().h()
    }

    pub fn width(&self) -> usize {
        self.image.shape().w()
    }

    pub fn check_aligned(&self) -> Result<()> {
        let s = self.image.shape();
        if s.n() != 1 {
            return Err(Error::Extent(format!(
                "sample image must have batch 1, got {s}"
            )));
        }
        let (h, w) = (s.h(), s.w());
        let ok = [
            (self.seg.h, self.seg.w),
            (self.boundary.h, self.boundary.w),
            (self.labels.h, self.labels.w),
        ]
        .iter()
        .all(|&e| e == (h, w));
        if ok {
            Ok(())
        } else {
            Err(Error::Extent(format!(
                "image is {h}x{w} but masks are {}x{}, {}x{}, {}x{}",
                self.seg.h,
                self.seg.w,
                self.boundary.h,
                self.boundary.w,
                self.labels.h,
                self.labels.w
            )))
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Sample {
        let s = self.image.shape();
        let mut data = Vec::with_capacity(s.c() * h * w);
        for plane in self.image.data().chunks(s.h() * s.w()) {
            data.extend(crop_plane(plane, s.w(), y0, x0, h, w));
        }
        Sample {
            image: Tensor::new(Shape::new(1, s.c(), h, w), data).expect("crop extent"),
            seg: self.seg.crop(y0, x0, h, w),
            boundary: self.boundary.crop(y0, x0, h, w),
            labels: self.labels.crop(y0, x0, h, w),
        }
    }
}

/// Applies the same flip to the image and every mask.
pub fn flip_augment(sample: &Sample, mode: FlipMode) -> Result<Sample> {
    sample.check_aligned()?;
    let (h, w) = (sample.height(), sample.width());
    let mut out = sample.clone();
    flip_planes(out.image.data_mut(), h, w, mode);
    flip_planes(&mut out.seg.data, h, w, mode);
    flip_planes(&mut out.boundary.data, h, w, mode);
    flip_planes(&mut out.labels.data, h, w, mode);
    Ok(out)
}

/// Tile origins along one axis: a regular grid with the last tile clamped to
/// end exactly at the edge. `stride <= size`, so every pixel is covered.
pub fn tile_origins(extent: usize, size: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 || size == 0 {
        return Err(Error::Config(
            "tile size and stride must be positive".into(),
        ));
    }
    if stride > size {
        return Err(Error::Config(format!(
            "tile stride {stride} exceeds tile size {size}; pixels would be skipped"
        )));
    }
    if size > extent {
        return Err(Error::Extent(format!(
            "tile size {size} exceeds image extent {extent}"
        )));
    }
    let last = extent - size;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().expect("origin 0") != last {
        out.push(last);
    }
    Ok(out)
}

/// A tile and its top-left corner `(y, x)` in the source.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub origin: (usize, usize),
    pub sample: Sample,
}

/// Cuts a sample into `size x size` tiles on a clamped regular grid.
pub fn tile(sample: &Sample, size: usize, stride: usize) -> Result<Vec<Tile>> {
    sample.check_aligned()?;
    let ys = tile_origins(sample.height(), size, stride)?;
    let xs = tile_origins(sample.width(), size, stride)?;
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            out.push(Tile {
                origin: (y, x),
                sample: sample.crop(y, x, size, size),
            });
        }
    }
    Ok(out)
}
