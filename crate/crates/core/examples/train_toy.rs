//! Trains a slim boundary-aware model on synthetic scenes for a few epochs
//! and writes its checkpoint.
//!
//! `cargo run --release --example train_toy -- [epochs] [checkpoint]`

use vinseg::model::ModelConfig;
use vinseg::pipeline::{hold_out, synth_scene, train, SceneConfig, TrainConfig};

fn main() -> vinseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(5, |s| s.parse().expect("epochs"));
    let out = args.next().unwrap_or_else(|| "toy.ckpt".into());

    let scene = SceneConfig {
        height: 64,
        width: 64,
        count: 5,
        touching_pairs: 2,
        ..Default::default()
    };
    let samples = (0..60)
        .map(|s| synth_scene(&scene, s))
        .collect::<vinseg::Result<Vec<_>>>()?;
    let (tr, va) = hold_out(samples, 0.1, 0)?;

    let mut model = ModelConfig::boundary_aware(0);
    model.backbone.stem_channels = 8;
    model.backbone.stage_channels = [8, 16, 32];
    let cfg = TrainConfig {
        max_epochs: epochs,
        ..Default::default()
    };
    let outcome = train(&model, &cfg, &tr, &va, |e| {
        println!(
            "epoch {:>2}  train {:>9.2}  val {:>9.2}  {} ms",
            e.epoch, e.train_loss, e.val_loss, e.wall_ms
        );
    })?;
    std::fs::write(&out, outcome.checkpoint_bytes()?).expect("write checkpoint");
    println!("kept epoch {}, wrote {out}", outcome.best_epoch);
    Ok(())
}
