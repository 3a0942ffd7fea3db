//! Single-branch versus boundary-aware training on one dataset, over several
//! seeds, with the same data order, initialization and schedule.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{save_labels, save_probability, Manifest, Split};
use super::predict::{extract_instances, predict, ExtractConfig, PredictConfig};
use super::train::{hold_out, patches, train, EpochLog, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::mask_ops::{erode_instances, InstanceLabelMap, Sample};
use crate::metrics::{score_image, AggregateReport, MetricsReport};
use crate::model::{BackboneConfig, Model, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    /// Sliding-window overlap; the window is the manifest's patch size.
    pub overlap: usize,
    pub extract: ExtractConfig,
    /// Disk radius of the eroded pixel evaluation.
    pub erosion_radius: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            seeds: vec![0, 1, 2, 3, 4],
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
            overlap: 32,
            extract: ExtractConfig::default(),
            erosion_radius: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: String,
    pub branches: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub first_train_loss: f64,
    pub last_train_loss: f64,
    pub test: AggregateReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub resfcn: VariantResult,
    pub boundary_aware: VariantResult,
    /// Boundary-aware instance F1 strictly above the single-branch one.
    pub boundary_aware_wins: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<SeedResult>,
    pub boundary_aware_wins: usize,
}

/// Predicted instance map and segmentation probabilities of one image.
pub type Prediction = (InstanceLabelMap, Vec<f32>);

/// Scores a model on test samples; returns the report and the predicted
/// instance maps with their segmentation probabilities, in input order.
pub fn evaluate_model(
    model: &Model,
    samples: &[(String, Sample)],
    predict_cfg: &PredictConfig,
    extract_cfg: &ExtractConfig,
    erosion_radius: usize,
) -> Result<(MetricsReport, Vec<Prediction>)> {
    let (reports, preds): (Vec<_>, Vec<_>) = samples
        .par_iter()
        .map(|(name, s)| {
            let probs = predict(model, &s.image, predict_cfg)?;
            let pred = extract_instances(&probs, extract_cfg)?;
            let (_, ignore) = erode_instances(&s.labels, erosion_radius);
            let report = score_image(name, &pred, &s.labels, Some(&ignore))?;
            Ok((report, (pred, probs.seg)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((MetricsReport::from_images(reports), preds))
}

fn variant_name(branches: usize) -> &'static str {
    if branches == 2 {
        "b-resfcn"
    } else {
        "resfcn"
    }
}

/// Everything an ablation run produced for one variant and seed.
pub struct VariantRun {
    pub outcome: TrainOutcome,
    pub report: MetricsReport,
    pub predictions: Vec<(InstanceLabelMap, Vec<f32>)>,
    pub result: VariantResult,
}

#[allow(clippy::too_many_arguments)]
fn run_variant(
    cfg: &AblationConfig,
    seed: u64,
    branches: usize,
    train_set: &[Sample],
    val_set: &[Sample],
    test: &[(String, Sample)],
    patch: usize,
    on_epoch: &mut dyn FnMut(&str, u64, &EpochLog),
) -> Result<VariantRun> {
    let model_cfg = ModelConfig {
        backbone: cfg.backbone.clone(),
        branches,
        lambda: cfg.train.lambda,
        seed,
    };
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let name = variant_name(branches);
    let outcome = train(&model_cfg, &tc, train_set, val_set, |e| {
        on_epoch(name, seed, e)
    })?;
    let pc = PredictConfig {
        patch,
        overlap: cfg.overlap,
    };
    let (report, predictions) =
        evaluate_model(&outcome.model, test, &pc, &cfg.extract, cfg.erosion_radius)?;
    let result = VariantResult {
        variant: name.to_string(),
        branches,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.log.len(),
        stopped_early: outcome.stopped_early,
        first_train_loss: outcome.log.first().map_or(f64::NAN, |e| e.train_loss),
        last_train_loss: outcome.log.last().map_or(f64::NAN, |e| e.train_loss),
        test: report.aggregate.clone(),
    };
    Ok(VariantRun {
        outcome,
        report,
        predictions,
        result,
    })
}

fn write_run(dir: &Path, seed: u64, run: &VariantRun, test: &[(String, Sample)]) -> Result<()> {
    let stem = format!("{}_seed{seed}", run.result.variant);
    let ckpt = dir.join(format!("{stem}.ckpt"));
    std::fs::write(&ckpt, run.outcome.checkpoint_bytes()?).map_err(|e| Error::io(&ckpt, e))?;
    let log = dir.join(format!("{stem}.log.jsonl"));
    std::fs::write(&log, run.outcome.log_jsonl()?).map_err(|e| Error::io(&log, e))?;
    let report = dir.join(format!("{stem}.metrics.json"));
    std::fs::write(&report, serde_json::to_string_pretty(&run.report)?)
        .map_err(|e| Error::io(&report, e))?;
    let pred_dir = dir.join(&stem);
    std::fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
    for ((name, s), (labels, seg)) in test.iter().zip(&run.predictions) {
        save_labels(&pred_dir.join(format!("{name}.labels.png")), labels)?;
        save_probability(
            &pred_dir.join(format!("{name}.seg.png")),
            seg,
            s.height(),
            s.width(),
        )?;
    }
    Ok(())
}

/// Trains both variants per seed on the manifest's train split (plus a
/// held-out validation share), scores them on the test split and, when
/// `out_dir` is given, writes checkpoints, logs, predictions and reports.
pub fn ablate(
    manifest: &Manifest,
    cfg: &AblationConfig,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&str, u64, &EpochLog),
) -> Result<AblationReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let patch = manifest.patch_size;
    let train_all = patches(&manifest.load_split(Split::Train)?, patch)?;
    let extra_val = patches(&manifest.load_split(Split::Val)?, patch)?;
    let test: Vec<(String, Sample)> = manifest
        .records(Split::Test)
        .map(|r| {
            let name = r
                .image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, manifest.load_sample(r)?))
        })
        .collect::<Result<_>>()?;
    if test.is_empty() {
        return Err(Error::Data("manifest has no test records".into()));
    }
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let (tr, mut va) = hold_out(train_all.clone(), cfg.train.val_fraction, seed)?;
        va.extend(extra_val.iter().cloned());
        let r = run_variant(cfg, seed, 1, &tr, &va, &test, patch, &mut on_epoch)?;
        let b = run_variant(cfg, seed, 2, &tr, &va, &test, patch, &mut on_epoch)?;
        if let Some(d) = out_dir {
            write_run(d, seed, &r, &test)?;
            write_run(d, seed, &b, &test)?;
        }
        let wins = b.result.test.instance.f1 > r.result.test.instance.f1;
        seeds.push(SeedResult {
            seed,
            resfcn: r.result,
            boundary_aware: b.result,
            boundary_aware_wins: wins,
        });
    }
    let report = AblationReport {
        boundary_aware_wins: seeds.iter().filter(|s| s.boundary_aware_wins).count(),
        seeds,
    };
    if let Some(d) = out_dir {
        let p = d.join("ablation.json");
        std::fs::write(&p, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}
