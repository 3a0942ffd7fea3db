//! Writes a small synthetic touching-vehicles dataset and summarizes it.
//!
//! `cargo run --example synth_dataset -- [out_dir]`

use vinseg::pipeline::{synth_dataset, DatasetConfig, SceneConfig};

fn main() -> vinseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "synth_data".into());
    let cfg = DatasetConfig {
        scene: SceneConfig {
            count: 12,
            touching_pairs: 4,
            ..Default::default()
        },
        train: 20,
        val: 4,
        test: 8,
        seed: 1,
    };
    let manifest = synth_dataset(out.as_ref(), &cfg)?;
    for s in manifest.summarize()? {
        println!(
            "{:<5} {:>3} images {:>4} vehicles {:>6} vehicle pixels",
            s.split.name(),
            s.images,
            s.instances,
            s.foreground_pixels
        );
    }
    println!("manifest: {out}/manifest.json");
    Ok(())
}
