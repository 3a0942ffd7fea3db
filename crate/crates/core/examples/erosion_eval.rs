//! Pixel scores against the full and the eroded ground truth: a blurry
//! prediction loses mostly at object borders, which erosion ignores.

use vinseg::mask_ops::{erode_instances, BinaryMask};
use vinseg::metrics::pixel_metrics;
use vinseg::pipeline::{synth_scene, SceneConfig};

fn main() -> vinseg::Result<()> {
    let sample = synth_scene(&SceneConfig::default(), 11)?;
    let gt = sample.labels.foreground();
    // grow every vehicle by one pixel to mimic soft borders
    let pred = gt.dilate(1);
    let (eroded, ignore) = erode_instances(&sample.labels, 3);
    let full = pixel_metrics(&pred, &gt, None)?;
    let masked = pixel_metrics(&pred, &gt, Some(&ignore))?;
    println!(
        "vehicles {}, surviving erosion {}",
        sample.labels.count(),
        eroded
            .instance_sizes()
            .iter()
            .skip(1)
            .filter(|&&n| n > 0)
            .count()
    );
    println!("ignored pixels {} of {}", ignore.count(), gt.data().len());
    println!("full ground truth:   OA {:.4} F1 {:.4}", full.oa, full.f1);
    println!(
        "eroded ground truth: OA {:.4} F1 {:.4}",
        masked.oa, masked.f1
    );
    let empty = BinaryMask::zeros(gt.height(), gt.width());
    println!(
        "empty prediction F1: {:.4}",
        pixel_metrics(&empty, &gt, Some(&ignore))?.f1
    );
    Ok(())
}
