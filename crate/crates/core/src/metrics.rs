//! Pixel and instance scores: overall accuracy and F1 over vehicle pixels,
//! instance matching under the 50% rule, instance precision/recall/F1, Dice
//! and the size-weighted instance-level Dice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_ops::{BinaryMask, IgnoreMask, InstanceLabelMap};

/// Pixel confusion counts for the vehicle class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl PixelCounts {
    pub fn merge(self, o: PixelCounts) -> PixelCounts {
        PixelCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }

    /// Correct / evaluated; 1 when nothing is evaluated.
    pub fn overall_accuracy(&self) -> f64 {
        let total = self.tp + self.fp + self.fn_ + self.tn;
        if total == 0 {
            1.0
        } else {
            (self.tp + self.tn) as f64 / total as f64
        }
    }

    /// `2 TP / (2 TP + FP + FN)`; 1 when neither side has a positive pixel.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelScores {
    pub oa: f64,
    pub f1: f64,
}

impl From<PixelCounts> for PixelScores {
    fn from(c: PixelCounts) -> Self {
        PixelScores {
            oa: c.overall_accuracy(),
            f1: c.f1(),
        }
    }
}

fn check_extent(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Extent(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )))
    }
}

/// Confusion counts over non-ignored pixels.
pub fn pixel_counts(
    pred: &BinaryMask,
    gt: &BinaryMask,
    ignore: Option<&IgnoreMask>,
) -> Result<PixelCounts> {
    let e = (gt.height(), gt.width());
    check_extent(
        (pred.height(), pred.width()),
        e,
        "prediction and ground truth differ",
    )?;
    if let Some(ig) = ignore {
        check_extent(
            (ig.height(), ig.width()),
            e,
            "ignore mask and ground truth differ",
        )?;
    }
    let mut c = PixelCounts::default();
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if ignore.is_some_and(|ig| ig.data()[i]) {
            continue;
        }
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Overall accuracy and vehicle-class F1, ignored pixels excluded.
pub fn pixel_metrics(
    pred: &BinaryMask,
    gt: &BinaryMask,
    ignore: Option<&IgnoreMask>,
) -> Result<PixelScores> {
    pixel_counts(pred, gt, ignore).map(PixelScores::from)
}

/// Overlap table between two label maps.
struct Overlaps {
    pred_sizes: Vec<u64>,
    gt_sizes: Vec<u64>,
    /// `(pred id, gt id) -> pixels`, both ids >= 1, sorted by pred then gt.
    pairs: Vec<(u32, u32, u64)>,
}

fn overlaps(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> Result<Overlaps> {
    check_extent(
        (pred.height(), pred.width()),
        (gt.height(), gt.width()),
        "prediction and ground truth differ",
    )?;
    let mut pred_sizes = vec![0u64; pred.count() as usize + 1];
    let mut gt_sizes = vec![0u64; gt.count() as usize + 1];
    let mut map = std::collections::BTreeMap::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        pred_sizes[p as usize] += 1;
        gt_sizes[g as usize] += 1;
        if p != 0 && g != 0 {
            *map.entry((p, g)).or_insert(0u64) += 1;
        }
    }
    Ok(Overlaps {
        pred_sizes,
        gt_sizes,
        pairs: map.into_iter().map(|((p, g), n)| (p, g, n)).collect(),
    })
}

/// Outcome of one-to-one instance matching.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMatching {
    /// Indexed by predicted id (entry 0 unused): matched gt id and overlap.
    pub pred_match: Vec<Option<(u32, u64)>>,
    /// Indexed by gt id (entry 0 unused): matched predicted id.
    pub gt_match: Vec<Option<u32>>,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Matches predictions to ground truth.
///
/// Each prediction's candidate is the gt object it overlaps most (ties to the
/// smaller gt id). A candidate pair qualifies when the overlap covers at least
/// half of the gt object. Qualifying pairs are accepted greedily in
/// descending overlap order, ties by smaller gt id then smaller predicted id,
/// each gt object at most once. Ids with no pixels are not counted.
pub fn match_instances(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> Result<InstanceMatching> {
    let ov = overlaps(pred, gt)?;
    let n_pred = ov.pred_sizes.len();
    let n_gt = ov.gt_sizes.len();
    let mut best: Vec<Option<(u32, u64)>> = vec![None; n_pred];
    for &(p, g, n) in &ov.pairs {
        let slot = &mut best[p as usize];
        // Pairs arrive in ascending gt order, so strict `>` keeps the smaller id on ties.
        if slot.is_none_or(|(_, m)| n > m) {
            *slot = Some((g, n));
        }
    }
    let mut candidates: Vec<(u64, u32, u32)> = best
        .iter()
        .enumerate()
        .filter_map(|(p, b)| {
            let (g, n) = (*b)?;
            (2 * n >= ov.gt_sizes[g as usize]).then_some((n, g, p as u32))
        })
        .collect();
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pred_match = vec![None; n_pred];
    let mut gt_match = vec![None; n_gt];
    let mut tp = 0;
    for (n, g, p) in candidates {
        if gt_match[g as usize].is_none() {
            gt_match[g as usize] = Some(p);
            pred_match[p as usize] = Some((g, n));
            tp += 1;
        }
    }
    let n_pred_present = ov.pred_sizes.iter().skip(1).filter(|&&s| s > 0).count() as u64;
    let n_gt_present = ov.gt_sizes.iter().skip(1).filter(|&&s| s > 0).count() as u64;
    Ok(InstanceMatching {
        pred_match,
        gt_match,
        tp,
        fp: n_pred_present - tp,
        fn_: n_gt_present - tp,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and their harmonic mean from match counts.
///
/// A scene with neither predictions nor ground truth scores 1 on all three;
/// otherwise an empty denominator gives 0.
pub fn instance_prf(tp: u64, fp: u64, fn_: u64) -> InstanceScores {
    if tp + fp + fn_ == 0 {
        return InstanceScores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    InstanceScores {
        precision,
        recall,
        f1,
    }
}

/// `2 |V ∩ G| / (|V| + |G|)`, 0 when both are empty.
pub fn dice(v: u64, g: u64, intersection: u64) -> f64 {
    if v + g == 0 {
        0.0
    } else {
        2.0 * intersection as f64 / (v + g) as f64
    }
}

/// Dice of two pixel sets given as masks.
pub fn dice_masks(v: &BinaryMask, g: &BinaryMask) -> Result<f64> {
    check_extent(
        (v.height(), v.width()),
        (g.height(), g.width()),
        "dice operands differ",
    )?;
    let inter = v
        .data()
        .iter()
        .zip(g.data())
        .filter(|(&a, &b)| a != 0 && b != 0)
        .count() as u64;
    Ok(dice(v.count_ones() as u64, g.count_ones() as u64, inter))
}

/// Size-weighted instance-level Dice:
/// `½ [Σ_i ω_i D(V_i, G_i) + Σ_j ω̃_j D(Ṽ_j, G̃_j)]`, where `G_i` is the gt
/// object overlapping prediction `V_i` most, `Ṽ_j` the prediction overlapping
/// gt object `G̃_j` most, and the weights are each instance's share of its
/// side's pixels. Instances without an overlap partner score 0; an empty
/// side contributes 0.
pub fn instance_dice(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> Result<f64> {
    let ov = overlaps(pred, gt)?;
    let term =
        |own: &[u64], other: &[u64], pairs: &mut dyn Iterator<Item = (u32, u32, u64)>| -> f64 {
            let mut best: Vec<Option<(u32, u64)>> = vec![None; own.len()];
            for (a, b, n) in pairs {
                let slot = &mut best[a as usize];
                if slot.is_none_or(|(bb, m)| n > m || (n == m && b < bb)) {
                    *slot = Some((b, n));
                }
            }
            let total: u64 = own.iter().skip(1).sum();
            if total == 0 {
                return 0.0;
            }
            own.iter()
                .enumerate()
                .skip(1)
                .map(|(a, &size)| match best[a] {
                    Some((b, n)) => size as f64 / total as f64 * dice(size, other[b as usize], n),
                    None => 0.0,
                })
                .sum()
        };
    let forward = term(
        &ov.pred_sizes,
        &ov.gt_sizes,
        &mut ov.pairs.iter().map(|&(p, g, n)| (p, g, n)),
    );
    let backward = term(
        &ov.gt_sizes,
        &ov.pred_sizes,
        &mut ov.pairs.iter().map(|&(p, g, n)| (g, p, n)),
    );
    Ok(0.5 * (forward + backward))
}

/// Scores of a single image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub name: String,
    pub pixel_counts: PixelCounts,
    pub pixel: PixelScores,
    /// Pixel scores with the eroded band ignored, when requested.
    pub pixel_eroded: Option<PixelScores>,
    pub eroded_counts: Option<PixelCounts>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub instance: InstanceScores,
    pub instance_dice: f64,
}

/// Totals over a set of images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub images: usize,
    /// From summed confusion counts.
    pub pixel: PixelScores,
    pub pixel_eroded: Option<PixelScores>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// From summed match counts.
    pub instance: InstanceScores,
    /// Mean of per-image instance-level Dice.
    pub instance_dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_image: Vec<ImageReport>,
    pub aggregate: AggregateReport,
}

/// Scores one image. `erosion` is the ignore mask used for the eroded pixel
/// scores; instance scores always use the full maps.
pub fn score_image(
    name: &str,
    pred: &InstanceLabelMap,
    gt: &InstanceLabelMap,
    erosion: Option<&IgnoreMask>,
) -> Result<ImageReport> {
    let (pf, gf) = (pred.foreground(), gt.foreground());
    let counts = pixel_counts(&pf, &gf, None)?;
    let eroded_counts = erosion
        .map(|ig| pixel_counts(&pf, &gf, Some(ig)))
        .transpose()?;
    let m = match_instances(pred, gt)?;
    Ok(ImageReport {
        name: name.to_string(),
        pixel_counts: counts,
        pixel: counts.into(),
        pixel_eroded: eroded_counts.map(PixelScores::from),
        eroded_counts,
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        instance: instance_prf(m.tp, m.fp, m.fn_),
        instance_dice: instance_dice(pred, gt)?,
    })
}

impl MetricsReport {
    pub fn from_images(per_image: Vec<ImageReport>) -> Self {
        let sum_counts = per_image
            .iter()
            .fold(PixelCounts::default(), |a, r| a.merge(r.pixel_counts));
        let eroded = per_image
            .iter()
            .map(|r| r.eroded_counts)
            .try_fold(PixelCounts::default(), |a, c| c.map(|c| a.merge(c)));
        let (tp, fp, fn_) = per_image
            .iter()
            .fold((0, 0, 0), |a, r| (a.0 + r.tp, a.1 + r.fp, a.2 + r.fn_));
        let instance_dice = if per_image.is_empty() {
            0.0
        } else {
            per_image.iter().map(|r| r.instance_dice).sum::<f64>() / per_image.len() as f64
        };
        let aggregate = AggregateReport {
            images: per_image.len(),
            pixel: sum_counts.into(),
            pixel_eroded: if per_image.is_empty() {
                None
            } else {
                eroded.map(PixelScores::from)
            },
            tp,
            fp,
            fn_,
            instance: instance_prf(tp, fp, fn_),
            instance_dice,
        };
        MetricsReport {
            per_image,
            aggregate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prf_hand_case() {
        let s = instance_prf(1, 0, 1);
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(instance_prf(0, 0, 0).f1, 1.0);
        assert_eq!(instance_prf(0, 3, 0).f1, 0.0);
        assert_eq!(instance_prf(0, 0, 2).precision, 0.0);
    }

    #[test]
    fn dice_cases() {
        assert_eq!(dice(5, 5, 5), 1.0);
        assert_eq!(dice(3, 4, 0), 0.0);
        assert!((dice(4, 8, 4) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice(0, 0, 0), 0.0);
    }
}
