//! Dataset I/O, synthetic scenes, training, sliding-window prediction,
//! instance extraction and the single- versus two-branch comparison.

pub mod ablate;
pub mod io;
pub mod predict;
pub mod synth;
pub mod train;

pub use ablate::{
    ablate, evaluate_model, AblationConfig, AblationReport, SeedResult, VariantResult,
};
pub use io::{load_sample, save_sample, Manifest, Record, Split, SplitSummary};
pub use predict::{
    binarize, extract_instances, predict, ExtractConfig, PredictConfig, Probabilities,
};
pub use synth::{synth_dataset, synth_samples, synth_scene, DatasetConfig, SceneConfig};
pub use train::{
    evaluate_loss, hold_out, patches, train, train_step, Augmentation, EpochLog, TrainConfig,
    TrainOutcome,
};
