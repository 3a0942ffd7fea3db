//! Sliding-window prediction on a scene larger than the window, then instance
//! extraction from the stitched segmentation map.
//!
//! `cargo run --release --example predict_tiles -- [checkpoint]`
//! Without a checkpoint an untrained model is used, which still shows the
//! stitching: the output covers every pixel of the input.

use vinseg::checkpoint;
use vinseg::model::{Model, ModelConfig};
use vinseg::pipeline::{
    extract_instances, predict, synth_scene, ExtractConfig, PredictConfig, SceneConfig,
};

fn main() -> vinseg::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => checkpoint::load(p.as_ref())?.model,
        None => Model::new(ModelConfig::boundary_aware(0))?,
    };
    let scene = SceneConfig {
        height: 160,
        width: 224,
        count: 30,
        touching_pairs: 6,
        ..Default::default()
    };
    let sample = synth_scene(&scene, 3)?;
    for (patch, overlap) in [(64, 0), (64, 16), (96, 32)] {
        let probs = predict(&model, &sample.image, &PredictConfig { patch, overlap })?;
        let labels = extract_instances(&probs, &ExtractConfig::default())?;
        let mean = probs.seg.iter().map(|&v| v as f64).sum::<f64>() / probs.seg.len() as f64;
        println!(
            "window {patch:>3} overlap {overlap:>2}: {}x{} map, mean vehicle probability {mean:.3}, {} instances (truth {})",
            probs.height,
            probs.width,
            labels.count(),
            sample.labels.count()
        );
    }
    Ok(())
}
