//! Mini-batch training with a held-out validation set and early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::mask_ops::{flip_augment, tile, FlipMode, Sample};
use crate::model::{joint_loss, Model, ModelConfig};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    /// Boundary loss weight; overrides the model configuration's value.
    pub lambda: f64,
    pub optimizer: OptimizerConfig,
    /// Share of the training records held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
    pub augment: Augmentation,
}

/// Flip augmentation of the training patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    None,
    /// One copy per patch and epoch with a flip mode drawn uniformly from
    /// none/h/v/hv.
    Random,
    /// Four copies per patch and epoch, one per flip mode, so three quarters
    /// of the expanded set is flipped.
    Expand,
}

impl Augmentation {
    pub fn copies(self) -> usize {
        match self {
            Augmentation::Expand => 4,
            _ => 1,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            max_epochs: 50,
            patience: 5,
            lambda: 0.1,
            optimizer: OptimizerConfig::default(),
            val_fraction: 0.1,
            seed: 0,
            augment: Augmentation::Random,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie strictly between 0 and 1, got {}",
                self.val_fraction
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("invalid lambda {}", self.lambda)));
        }
        self.optimizer.validate()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-image joint loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean per-image joint loss on the validation set, evaluation mode.
    pub val_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

/// The best-validation state plus the full log.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: Optimizer,
    /// 1-based epoch of the kept state.
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn val_history(&self) -> Vec<f64> {
        self.log.iter().map(|e| e.val_loss).collect()
    }

    /// Checkpoint bytes of the kept state.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let hist: Vec<f64> = self.val_history()[..self.best_epoch].to_vec();
        checkpoint::encode(
            &self.model,
            Some(&self.optimizer),
            self.best_epoch as u64,
            &hist,
        )
    }

    /// The log as JSON lines.
    pub fn log_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.log {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Cuts samples larger than `patch` into non-overlapping patches (edge
/// patches clamped), leaves patch-sized samples as they are.
pub fn patches(samples: &[Sample], patch: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for s in samples {
        if s.height() == patch && s.width() == patch {
            out.push(s.clone());
        } else {
            out.extend(tile(s, patch, patch)?.into_iter().map(|t| t.sample));
        }
    }
    Ok(out)
}

/// Splits `train` into (train, validation) by a seeded shuffle.
pub fn hold_out(
    train: Vec<Sample>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let n = train.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 training samples to hold some out, got {n}"
        )));
    }
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fa1));
    let mut is_val = vec![false; n];
    for &i in &order[..k] {
        is_val[i] = true;
    }
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for (s, v) in train.into_iter().zip(is_val) {
        if v {
            va.push(s)
        } else {
            tr.push(s)
        }
    }
    Ok((tr, va))
}

struct Batch {
    images: Tensor,
    seg: Tensor,
    boundary: Tensor,
}

fn make_batch(items: &[&Sample]) -> Result<Batch> {
    let images: Vec<Tensor> = items.iter().map(|s| s.image.clone()).collect();
    let seg: Vec<Tensor> = items.iter().map(|s| s.seg.to_tensor()).collect();
    let boundary: Vec<Tensor> = items.iter().map(|s| s.boundary.to_tensor()).collect();
    Ok(Batch {
        images: Tensor::stack(&images)?,
        seg: Tensor::stack(&seg)?,
        boundary: Tensor::stack(&boundary)?,
    })
}

fn numeric(context: String) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{context}: {what}")),
        other => other,
    }
}

/// One optimizer step on a batch; returns the summed joint loss.
pub fn train_step(model: &mut Model, optimizer: &mut Optimizer, items: &[&Sample]) -> Result<f64> {
    let batch = make_batch(items)?;
    let lambda = model.config().lambda;
    let two = model.config().branches == 2;
    let mut g = Graph::new();
    let params = model.param_leaves(&mut g, true);
    let x = g.leaf(batch.images, false);
    let pred = model.forward_train(&mut g, &params, x)?;
    let bt = two.then_some(&batch.boundary);
    let loss = joint_loss(&mut g, pred.seg, pred.boundary, &batch.seg, bt, lambda)?;
    let value = g.value(loss).item()? as f64;
    g.backward(loss)?;
    let grads: Vec<Tensor> = params
        .iter()
        .zip(model.params())
        .map(|(&v, p)| g.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    optimizer.step(model.params_mut(), &grads)?;
    Ok(value)
}

/// Mean per-image joint loss in evaluation mode.
pub fn evaluate_loss(model: &Model, samples: &[Sample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let two = model.config().branches == 2;
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = make_batch(&refs)?;
        let mut g = Graph::new();
        let x = g.leaf(batch.images, false);
        let pred = model.forward(&mut g, x)?;
        let bt = two.then_some(&batch.boundary);
        let loss = joint_loss(
            &mut g,
            pred.seg,
            pred.boundary,
            &batch.seg,
            bt,
            model.config().lambda,
        )?;
        total += g.value(loss).item()? as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains from scratch. `train` and `val` must already be patch-sized.
/// `on_epoch` sees every log line as it is produced.
pub fn train(
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let mut mc = model_config.clone();
    mc.lambda = cfg.lambda;
    let mut model = Model::new(mc)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, model.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best: Option<(f64, usize, Model, Optimizer)> = None;
    let mut log = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    let copies = cfg.augment.copies();
    let mut order: Vec<usize> = (0..train_set.len() * copies).collect();
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let flipped: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    let (s, mode) = (i / copies, i % copies);
                    let mode = match cfg.augment {
                        Augmentation::None => FlipMode::None,
                        Augmentation::Random => FlipMode::ALL[rng.random_range(0..4)],
                        Augmentation::Expand => FlipMode::ALL[mode],
                    };
                    flip_augment(&train_set[s], mode)
                })
                .collect::<Result<_>>()?;
            let items: Vec<&Sample> = flipped.iter().collect();
            sum += train_step(&mut model, &mut optimizer, &items)
                .map_err(numeric(format!("epoch {epoch}, batch {}", b + 1)))?;
        }
        let train_loss = sum / order.len() as f64;
        let val_loss = evaluate_loss(&model, val_set, cfg.batch_size)
            .map_err(numeric(format!("validation after epoch {epoch}")))?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}: train loss {train_loss}, validation loss {val_loss}"
            )));
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr: cfg.optimizer.lr(),
            wall_ms: start.elapsed().as_millis() as u64,
        };
        on_epoch(&entry);
        log.push(entry);

        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, model.clone(), optimizer.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let (_, best_epoch, model, optimizer) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        optimizer,
        best_epoch,
        log,
        stopped_early,
    })
}
