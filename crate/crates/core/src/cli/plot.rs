//! Standalone SVG loss curves and colourized instance maps.

use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::mask_ops::InstanceLabelMap;
use crate::pipeline::EpochLog;

/// 64 colours: 16 hues at four saturation/value levels, none of them black.
pub fn palette() -> [[u8; 3]; 64] {
    let mut out = [[0u8; 3]; 64];
    for (i, c) in out.iter_mut().enumerate() {
        let hue = (i % 16) as f64 / 16.0;
        let (s, v) = [(0.9, 1.0), (0.6, 0.85), (1.0, 0.65), (0.45, 1.0)][i / 16];
        *c = hsv(hue, s, v);
    }
    out
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

/// Palette slot of an instance id. The multiplier is odd, so ids that
/// differ modulo 64 never share a colour.
pub fn colour_index(id: u32) -> usize {
    (id.wrapping_mul(0x9E37_79B1) & 63) as usize
}

/// Background black, every instance the palette colour of its id.
pub fn colorize(labels: &InstanceLabelMap) -> RgbImage {
    let pal = palette();
    let mut img = RgbImage::new(labels.width() as u32, labels.height() as u32);
    for (px, &id) in img.pixels_mut().zip(labels.data()) {
        if id != 0 {
            px.0 = pal[colour_index(id)];
        }
    }
    img
}

pub fn save_colored(path: &Path, labels: &InstanceLabelMap) -> Result<()> {
    colorize(labels).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Train and validation loss per epoch as a self-contained SVG document.
pub fn loss_curve_svg(log: &[EpochLog]) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let values: Vec<f64> = log
        .iter()
        .flat_map(|e| [e.train_loss, e.val_loss])
        .filter(|v| v.is_finite())
        .collect();
    if values.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = log.len().max(2) - 1;
    let x = |i: usize| m + (w - 2.0 * m) * i as f64 / n as f64;
    let y = |v: f64| h - m - (h - 2.0 * m) * (v - lo) / span;
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" stroke="black" fill="none"/>"#,
        h - m,
        w - m
    );
    for (label, v) in [(hi, hi), (lo, lo)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{label:.1}</text>"#,
            m - 4.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">epoch</text>"#,
        w / 2.0,
        h - 15.0
    );
    for (colour, name, pick) in [
        (
            "#1f77b4",
            "train",
            (|e: &EpochLog| e.train_loss) as fn(&EpochLog) -> f64,
        ),
        ("#d62728", "validation", |e: &EpochLog| e.val_loss),
    ] {
        let pts: Vec<String> = log
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{:.1},{:.1}", x(i), y(pick(e))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{colour}" fill="none" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = if name == "train" { m } else { m + 16.0 };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-size="12" fill="{colour}">{name}</text>"#,
            w - m - 70.0
        );
    }
    s.push_str("</svg>\n");
    s
}
