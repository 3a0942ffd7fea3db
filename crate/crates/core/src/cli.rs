//! Command-line front end.
//!
//! Every subcommand accepts `--seed` and `--config FILE`. The config file is
//! a JSON object whose keys are flag names (`touching_pairs` or
//! `touching-pairs`); its entries are applied first, so flags given on the
//! command line win.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::mask_ops::{
    erode_instances, flip_augment, instance_boundaries, tile, BinaryMask, Connectivity, FlipMode,
    InstanceLabelMap, Sample,
};
use crate::metrics::{pixel_counts, score_image, MetricsReport, PixelCounts, PixelScores};
use crate::model::{toy_gradient_check, BackboneConfig, ModelConfig};
use crate::optim::{AdamConfig, NadamConfig, OptimizerConfig, SgdConfig};
use crate::pipeline::io::{
    load_image, load_labels, load_mask, load_probability, save_image, save_labels, save_mask,
    save_probability,
};
use crate::pipeline::{
    ablate, extract_instances, hold_out, patches, predict, synth_dataset, train, AblationConfig,
    Augmentation, DatasetConfig, EpochLog, ExtractConfig, Manifest, PredictConfig, Probabilities,
    SceneConfig, Split, TrainConfig,
};

pub mod plot;

#[derive(Debug, Parser)]
#[command(
    name = "vinseg",
    version,
    about = "Vehicle instance segmentation toolkit"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON file with default values for any flag of the subcommand.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Cut an image and its instance map into square tiles.
    Tile(TileArgs),
    /// Flip an image and its instance map.
    Augment(AugmentArgs),
    /// Derive the boundary mask of an instance map.
    Boundaries(BoundariesArgs),
    /// Erode an instance map with a disk and write the ignore mask.
    Erode(ErodeArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Sliding-window prediction of probability maps.
    Predict(PredictArgs),
    /// Label connected regions of a probability map.
    Instances(InstancesArgs),
    /// Pixel-level overall accuracy and F1.
    EvalPixel(EvalPixelArgs),
    /// Instance-level precision, recall, F1 and Dice.
    EvalInstance(EvalInstanceArgs),
    /// Finite-difference check of the toy network's gradients.
    Gradcheck(GradcheckArgs),
    /// Train single- and two-branch models per seed and compare them.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    #[arg(long, default_value_t = 50)]
    pub test: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    /// Instances per scene, pair members included.
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 4)]
    pub touching_pairs: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub shadow: bool,
    #[arg(long, default_value_t = 8)]
    pub min_side: usize,
    #[arg(long, default_value_t = 20)]
    pub max_side: usize,
    /// Minimum distance between instances that are not a touching pair.
    #[arg(long, default_value_t = 1)]
    pub gap: usize,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Defaults to the tile size.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// none, h, v, hv, or all (writes one copy per mode).
    #[arg(long, default_value = "all")]
    pub mode: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BoundariesArgs {
    #[command(flatten)]
    pub common: Common,
    /// 16-bit instance map.
    #[arg(long)]
    pub labels: PathBuf,
    /// Chebyshev dilation radius applied to the 1-pixel boundary.
    #[arg(long, default_value_t = 0)]
    pub dilate: usize,
    /// 8-bit mask output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ErodeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub radius: usize,
    /// Eroded 16-bit instance map.
    #[arg(long)]
    pub out_labels: PathBuf,
    /// 8-bit mask of ignored pixels.
    #[arg(long)]
    pub out_ignore: PathBuf,
}

/// Model and optimizer flags shared by `train` and `ablate`.
#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// nadam, adam or sgd.
    #[arg(long, default_value = "nadam")]
    pub optimizer: String,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// none, random or expand.
    #[arg(long, default_value = "random")]
    pub augment: String,
    /// Comma-separated stem and stage widths, e.g. 16,16,32,64.
    #[arg(long, default_value = "16,16,32,64")]
    pub widths: String,
    /// Comma-separated residual blocks per stage, e.g. 2,2,2.
    #[arg(long, default_value = "2,2,2")]
    pub blocks: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for the checkpoint, the JSON-lines log and the loss plot.
    #[arg(long)]
    pub out: PathBuf,
    /// 1 = ResFCN, 2 = boundary-aware.
    #[arg(long, default_value_t = 2)]
    pub branches: usize,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub patch: usize,
    #[arg(long, default_value_t = 32)]
    pub overlap: usize,
    /// 8-bit segmentation probability map.
    #[arg(long)]
    pub out_seg: PathBuf,
    /// 8-bit boundary probability map (two-branch models only).
    #[arg(long)]
    pub out_boundary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InstancesArgs {
    #[command(flatten)]
    pub common: Common,
    /// 8-bit segmentation probability map.
    #[arg(long)]
    pub prob: PathBuf,
    /// 8-bit boundary probability map, used with --boundary-subtraction.
    #[arg(long)]
    pub boundary: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    #[arg(long, default_value_t = 4)]
    pub connectivity: u32,
    /// Remove predicted boundary pixels before labelling.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub boundary_subtraction: bool,
    #[arg(long, default_value_t = 0.5)]
    pub boundary_threshold: f32,
    /// Colour PNG, one palette colour per instance.
    #[arg(long)]
    pub out_color: PathBuf,
    /// 16-bit instance map.
    #[arg(long)]
    pub out_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalPixelArgs {
    #[command(flatten)]
    pub common: Common,
    /// 8-bit mask or 16-bit instance map.
    #[arg(long)]
    pub pred: PathBuf,
    /// 8-bit mask or 16-bit instance map.
    #[arg(long)]
    pub gt: PathBuf,
    /// Also score with a disk band of this radius ignored (gt must be an
    /// instance map).
    #[arg(long)]
    pub erode: Option<usize>,
    /// JSON report; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalInstanceArgs {
    #[command(flatten)]
    pub common: Common,
    /// 16-bit instance map.
    #[arg(long)]
    pub pred: PathBuf,
    /// 16-bit instance map.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub erode: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Only `toy` is available.
    #[arg(long, default_value = "toy")]
    pub model: String,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated seeds; `--seed` is used when absent.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long, default_value_t = 32)]
    pub overlap: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    #[arg(long, default_value_t = 4)]
    pub connectivity: u32,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub boundary_subtraction: bool,
    #[command(flatten)]
    pub train: TrainFlags,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Turns a JSON object into `--key value` tokens.
fn config_tokens(path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| config_error(format!("{} must hold a JSON object", path.display())))?;
    let mut out = Vec::new();
    for (k, v) in obj {
        let flag = format!("--{}", k.replace('_', "-"));
        if flag == "--config" {
            return Err(config_error(
                "a config file cannot name another config file",
            ));
        }
        let text = match v {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Bool(b) => b.to_string(),
            serde_json::Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => {
                return Err(config_error(format!("unsupported value for {k}: {other}")));
            }
        };
        out.push(flag.into());
        out.push(text.into());
    }
    Ok(out)
}

/// Inserts config-file tokens right after the subcommand name.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = argv.iter().position(|a| a == "--config") else {
        if let Some(a) = argv
            .iter()
            .find_map(|a| a.to_str().and_then(|s| s.strip_prefix("--config=")))
        {
            let mut out = argv[..2.min(argv.len())].to_vec();
            out.extend(config_tokens(Path::new(a))?);
            out.extend(argv.iter().skip(2).cloned());
            return Ok(out);
        }
        return Ok(argv);
    };
    let path = argv
        .get(pos + 1)
        .ok_or_else(|| config_error("--config needs a file"))?;
    let tokens = config_tokens(Path::new(path))?;
    let mut out = argv[..2.min(argv.len())].to_vec();
    out.extend(tokens);
    out.extend(argv.iter().skip(2).cloned());
    Ok(out)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

/// Caps the worker pool at `VINSEG_THREADS` when set.
fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("VINSEG_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            config_error(format!(
                "VINSEG_THREADS must be a positive integer, got {v:?}"
            ))
        })?;
        // A pool may already exist when called twice in one process; keep it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("vinseg: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match init_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("vinseg: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Tile(a) => cmd_tile(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Boundaries(a) => cmd_boundaries(a),
        Command::Erode(a) => cmd_erode(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Instances(a) => cmd_instances(a),
        Command::EvalPixel(a) => cmd_eval_pixel(a),
        Command::EvalInstance(a) => cmd_eval_instance(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = DatasetConfig {
        scene: SceneConfig {
            height: a.height,
            width: a.width,
            count: a.count,
            touching_pairs: a.touching_pairs,
            shadow: a.shadow,
            min_side: a.min_side,
            max_side: a.max_side,
            gap: a.gap,
            ..SceneConfig::default()
        },
        train: a.train,
        val: a.val,
        test: a.test,
        seed: a.common.seed,
    };
    let m = synth_dataset(&a.out, &cfg)?;
    for s in m.summarize()? {
        println!(
            "{}: {} images, {} instances, {} foreground pixels",
            s.split.name(),
            s.images,
            s.instances,
            s.foreground_pixels
        );
    }
    Ok(())
}

fn load_pair(image: &Path, labels: &Path) -> Result<Sample> {
    crate::pipeline::load_sample(image, labels)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn cmd_tile(a: TileArgs) -> Result<()> {
    let sample = load_pair(&a.image, &a.labels)?;
    let tiles = tile(&sample, a.size, a.stride.unwrap_or(a.size))?;
    create_dir(&a.out)?;
    let name = stem(&a.image);
    for t in &tiles {
        let (y, x) = t.origin;
        save_image(&a.out.join(format!("{name}_{y}_{x}.png")), &t.sample.image)?;
        save_labels(
            &a.out.join(format!("{name}_{y}_{x}.labels.png")),
            &t.sample.labels,
        )?;
    }
    println!("{} tiles", tiles.len());
    Ok(())
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let sample = load_pair(&a.image, &a.labels)?;
    let modes = if a.mode == "all" {
        FlipMode::ALL.to_vec()
    } else {
        vec![FlipMode::parse(&a.mode)?]
    };
    create_dir(&a.out)?;
    let name = stem(&a.image);
    for m in modes {
        let s = flip_augment(&sample, m)?;
        save_image(&a.out.join(format!("{name}_{}.png", m.name())), &s.image)?;
        save_labels(
            &a.out.join(format!("{name}_{}.labels.png", m.name())),
            &s.labels,
        )?;
    }
    Ok(())
}

fn cmd_boundaries(a: BoundariesArgs) -> Result<()> {
    let labels = load_labels(&a.labels)?;
    save_mask(&a.out, &instance_boundaries(&labels, a.dilate))
}

fn cmd_erode(a: ErodeArgs) -> Result<()> {
    let labels = load_labels(&a.labels)?;
    let (eroded, ignore) = erode_instances(&labels, a.radius);
    // Fully eroded ids drop out here; loading compacts them again.
    save_labels(&a.out_labels, &eroded)?;
    let mask = BinaryMask::new(
        ignore.height(),
        ignore.width(),
        ignore.data().iter().map(|&b| b as u8).collect(),
    )?;
    save_mask(&a.out_ignore, &mask)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| config_error(format!("{what}: cannot parse {t:?}")))
        })
        .collect()
}

fn backbone(f: &TrainFlags) -> Result<BackboneConfig> {
    let widths: Vec<usize> = parse_list(&f.widths, "--widths")?;
    let blocks: Vec<usize> = parse_list(&f.blocks, "--blocks")?;
    if widths.len() != 4 || blocks.len() != 3 {
        return Err(config_error(
            "--widths needs 4 values (stem and three stages), --blocks needs 3",
        ));
    }
    Ok(BackboneConfig {
        stem_channels: widths[0],
        stage_channels: [widths[1], widths[2], widths[3]],
        blocks_per_stage: [blocks[0], blocks[1], blocks[2]],
        input_channels: 3,
    })
}

fn train_config(f: &TrainFlags, seed: u64) -> Result<TrainConfig> {
    let optimizer = match f.optimizer.as_str() {
        "nadam" => OptimizerConfig::Nadam(NadamConfig {
            lr: f.lr,
            ..Default::default()
        }),
        "adam" => OptimizerConfig::Adam(AdamConfig {
            lr: f.lr,
            ..Default::default()
        }),
        "sgd" => OptimizerConfig::Sgd(SgdConfig {
            lr: f.lr,
            ..Default::default()
        }),
        other => return Err(config_error(format!("unknown optimizer {other:?}"))),
    };
    let augment = match f.augment.as_str() {
        "none" => Augmentation::None,
        "random" => Augmentation::Random,
        "expand" => Augmentation::Expand,
        other => return Err(config_error(format!("unknown augmentation {other:?}"))),
    };
    let cfg = TrainConfig {
        batch_size: f.batch_size,
        max_epochs: f.epochs,
        patience: f.patience,
        lambda: f.lambda,
        optimizer,
        val_fraction: f.val_fraction,
        seed,
        augment,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn print_epoch(prefix: &str, e: &EpochLog) {
    eprintln!(
        "{prefix}epoch {:>3}  train {:.4}  val {:.4}  {} ms",
        e.epoch, e.train_loss, e.val_loss, e.wall_ms
    );
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let seed = a.common.seed;
    let cfg = train_config(&a.train, seed)?;
    let model_cfg = ModelConfig {
        backbone: backbone(&a.train)?,
        branches: a.branches,
        lambda: a.train.lambda,
        seed,
    };
    model_cfg.validate()?;
    let manifest = Manifest::load(&a.manifest)?;
    let all = patches(&manifest.load_split(Split::Train)?, manifest.patch_size)?;
    let (tr, mut va) = hold_out(all, cfg.val_fraction, seed)?;
    va.extend(patches(
        &manifest.load_split(Split::Val)?,
        manifest.patch_size,
    )?);
    let outcome = train(&model_cfg, &cfg, &tr, &va, |e| print_epoch("", e))?;
    create_dir(&a.out)?;
    let ckpt = a.out.join("model.ckpt");
    std::fs::write(&ckpt, outcome.checkpoint_bytes()?).map_err(|e| Error::io(&ckpt, e))?;
    let log = a.out.join("train_log.jsonl");
    std::fs::write(&log, outcome.log_jsonl()?).map_err(|e| Error::io(&log, e))?;
    let svg = a.out.join("loss_curve.svg");
    std::fs::write(&svg, plot::loss_curve_svg(&outcome.log)).map_err(|e| Error::io(&svg, e))?;
    eprintln!(
        "kept epoch {} of {}{}",
        outcome.best_epoch,
        outcome.log.len(),
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let image = load_image(&a.image)?;
    let cfg = PredictConfig {
        patch: a.patch,
        overlap: a.overlap,
    };
    let probs = predict(&ck.model, &image, &cfg)?;
    save_probability(&a.out_seg, &probs.seg, probs.height, probs.width)?;
    if let Some(p) = &a.out_boundary {
        let b = probs
            .boundary
            .as_ref()
            .ok_or_else(|| config_error("--out-boundary needs a two-branch checkpoint"))?;
        save_probability(p, b, probs.height, probs.width)?;
    }
    Ok(())
}

fn cmd_instances(a: InstancesArgs) -> Result<()> {
    let (seg, h, w) = load_probability(&a.prob)?;
    let boundary = match &a.boundary {
        Some(p) => {
            let (b, bh, bw) = load_probability(p)?;
            if (bh, bw) != (h, w) {
                return Err(Error::Extent(format!(
                    "boundary map is {bh}x{bw}, segmentation map is {h}x{w}"
                )));
            }
            Some(b)
        }
        None => None,
    };
    let probs = Probabilities {
        height: h,
        width: w,
        seg,
        boundary,
    };
    let cfg = ExtractConfig {
        threshold: a.threshold,
        connectivity: a.connectivity,
        boundary_subtraction: a.boundary_subtraction,
        boundary_threshold: a.boundary_threshold,
    };
    let labels = extract_instances(&probs, &cfg)?;
    plot::save_colored(&a.out_color, &labels)?;
    if let Some(p) = &a.out_labels {
        save_labels(p, &labels)?;
    }
    println!("{} instances", labels.count());
    Ok(())
}

/// Reads either an 8-bit mask or a 16-bit instance map as a foreground mask,
/// plus the instance map when there is one.
fn load_foreground(path: &Path) -> Result<(BinaryMask, Option<InstanceLabelMap>)> {
    match load_labels(path) {
        Ok(l) => Ok((l.foreground(), Some(l))),
        Err(Error::BitDepth { .. }) => Ok((load_mask(path)?, None)),
        Err(e) => Err(e),
    }
}

#[derive(Serialize)]
struct PixelReport {
    counts: PixelCounts,
    pixel: PixelScores,
    eroded_counts: Option<PixelCounts>,
    pixel_eroded: Option<PixelScores>,
}

fn cmd_eval_pixel(a: EvalPixelArgs) -> Result<()> {
    let (pred, _) = load_foreground(&a.pred)?;
    let (gt, gt_labels) = load_foreground(&a.gt)?;
    let counts = pixel_counts(&pred, &gt, None)?;
    let eroded_counts = match a.erode {
        Some(r) => {
            let labels = gt_labels
                .ok_or_else(|| config_error("--erode needs a 16-bit instance map as --gt"))?;
            let (_, ignore) = erode_instances(&labels, r);
            Some(pixel_counts(&pred, &gt, Some(&ignore))?)
        }
        None => None,
    };
    let report = PixelReport {
        counts,
        pixel: counts.into(),
        eroded_counts,
        pixel_eroded: eroded_counts.map(PixelScores::from),
    };
    write_json(&report, a.out.as_deref())
}

fn cmd_eval_instance(a: EvalInstanceArgs) -> Result<()> {
    let pred = load_labels(&a.pred)?;
    let gt = load_labels(&a.gt)?;
    let (_, ignore) = erode_instances(&gt, a.erode);
    let image = score_image(&stem(&a.gt), &pred, &gt, Some(&ignore))?;
    let report = MetricsReport::from_images(vec![image]);
    write_json(&report, a.out.as_deref())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.model != "toy" {
        return Err(config_error(format!(
            "unknown model {:?}; only toy is available",
            a.model
        )));
    }
    let report = toy_gradient_check(a.common.seed, a.lambda, a.eps)?;
    println!(
        "max relative error {:.3e} over {} parameters",
        report.max_rel_error, report.checked
    );
    if report.max_rel_error < a.tolerance {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "gradient check failed: {:.3e} >= {:.1e}",
            report.max_rel_error, a.tolerance
        )))
    }
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let seeds = match &a.seeds {
        Some(s) => parse_list(s, "--seeds")?,
        None => vec![a.common.seed],
    };
    let cfg = AblationConfig {
        seeds,
        backbone: backbone(&a.train)?,
        train: train_config(&a.train, a.common.seed)?,
        overlap: a.overlap,
        extract: ExtractConfig {
            threshold: a.threshold,
            connectivity: a.connectivity,
            boundary_subtraction: a.boundary_subtraction,
            ..Default::default()
        },
        erosion_radius: 3,
    };
    Connectivity::from_number(cfg.extract.connectivity)?;
    let manifest = Manifest::load(&a.manifest)?;
    let report = ablate(&manifest, &cfg, Some(&a.out), |v, s, e| {
        print_epoch(&format!("{v} seed {s} "), e)
    })?;
    for s in &report.seeds {
        for v in [&s.resfcn, &s.boundary_aware] {
            println!(
                "seed {:>3}  {:<9} pixel F1 {:.4} (eroded {:.4})  instance F1 {:.4}  Dice {:.4}",
                s.seed,
                v.variant,
                v.test.pixel.f1,
                v.test.pixel_eroded.as_ref().map_or(f64::NAN, |p| p.f1),
                v.test.instance.f1,
                v.test.instance_dice
            );
        }
    }
    println!(
        "boundary-aware instance F1 higher on {} of {} seeds",
        report.boundary_aware_wins,
        report.seeds.len()
    );
    Ok(())
}
