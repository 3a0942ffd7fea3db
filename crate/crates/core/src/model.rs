//! Residual FCN backbone with multi-level fusion heads, and the two-branch
//! boundary-aware variant.
//!
//! Layout for an `H x W` input:
//!
//! ```text
//! stem   7x7/2 conv - BN - ReLU - 3x3/2 max-pool        H/4
//! stage1 residual blocks, first one stride 2             H/8   -> head
//! stage2 residual blocks, first one stride 2             H/16  -> head
//! stage3 residual blocks, first one stride 2             H/32  -> head
//! head   per level: 1x1 conv to one logit, bilinear upsample to H x W,
//!        sum, sigmoid
//! ```
//!
//! A segmentation head is always present. The boundary-aware model adds a
//! second, identically shaped head on the same features.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    grad_check, BatchNormState, BnMode, Element, GradCheckReport, Graph, Shape, Tensor, Var,
};

/// Widths and depths of the residual backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    /// Output channels of the stride 8, 16 and 32 stages.
    pub stage_channels: [usize; 3],
    pub blocks_per_stage: [usize; 3],
    pub input_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stem_channels: 16,
            stage_channels: [16, 32, 64],
            blocks_per_stage: [2, 2, 2],
            input_channels: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// 1 = ResFCN, 2 = boundary-aware ResFCN.
    pub branches: usize,
    /// Weight of the boundary loss. Ignored by single-branch models.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            branches: 2,
            lambda: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn resfcn(seed: u64) -> Self {
        ModelConfig {
            branches: 1,
            seed,
            ..Default::default()
        }
    }

    pub fn boundary_aware(seed: u64) -> Self {
        ModelConfig {
            branches: 2,
            seed,
            ..Default::default()
        }
    }

    /// A very small network for finite-difference checks.
    pub fn gradcheck_toy(seed: u64) -> Self {
        ModelConfig {
            backbone: BackboneConfig {
                stem_channels: 3,
                stage_channels: [3, 4, 4],
                blocks_per_stage: [1, 1, 1],
                input_channels: 3,
            },
            branches: 2,
            lambda: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        if b.stem_channels == 0
            || b.input_channels == 0
            || b.stage_channels.contains(&0)
            || b.blocks_per_stage.contains(&0)
        {
            return Err(Error::Config(
                "channel counts and blocks per stage must be at least 1".into(),
            ));
        }
        if !(1..=2).contains(&self.branches) {
            return Err(Error::Config(format!(
                "branches must be 1 or 2, got {}",
                self.branches
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Convolution followed by batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub weight: usize,
    pub gamma: usize,
    pub beta: usize,
    /// Index into the model's batch-norm running states.
    pub state: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Indices of one basic residual block's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    /// 1x1 projection on the shortcut when stride or width changes.
    pub projection: Option<ConvBn>,
    pub in_channels: usize,
    pub out_channels: usize,
}

/// Three 1x1 convolutions, one per fused feature level.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchHead {
    pub name: String,
    /// `(weight, bias)` parameter indices for the 1/8, 1/16, 1/32 levels.
    pub levels: [(usize, usize); 3],
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    stem: ConvBn,
    stages: Vec<Vec<ResidualBlock>>,
    heads: Vec<BranchHead>,
}

/// Whether batch normalization uses batch statistics (and updates the running
/// estimates) or the stored running estimates.
pub enum NormMode<'a, T> {
    Train(&'a mut [BatchNormState<T>]),
    Eval(&'a [BatchNormState<T>]),
}

impl<T> NormMode<'_, T> {
    fn slot(&mut self, i: usize) -> BnMode<'_, T> {
        match self {
            NormMode::Train(s) => BnMode::Train(&mut s[i]),
            NormMode::Eval(s) => BnMode::Eval(&s[i]),
        }
    }
}

/// Output maps of [`Model::multitask_forward`].
#[derive(Clone, Copy, Debug)]
pub struct Prediction {
    pub seg: Var,
    pub boundary: Option<Var>,
}

/// Named parameters, batch-norm buffers and the wiring between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    state_names: Vec<String>,
    states: Vec<BatchNormState<T>>,
    layout: Layout,
}

struct Builder<'r, T> {
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    state_names: Vec<String>,
    states: Vec<BatchNormState<T>>,
    rng: &'r mut ChaCha8Rng,
}

/// `sqrt(6 / (fan_in + fan_out))` for a `c_out x c_in x k x k` kernel.
pub fn glorot_limit(c_in: usize, c_out: usize, k: usize) -> f64 {
    let fan_in = (c_in * k * k) as f64;
    let fan_out = (c_out * k * k) as f64;
    (6.0 / (fan_in + fan_out)).sqrt()
}

impl<T: Element> Builder<'_, T> {
    fn push(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    fn glorot(&mut self, name: String, c_out: usize, c_in: usize, k: usize) -> usize {
        let limit = glorot_limit(c_in, c_out, k);
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
        let shape = Shape::new(c_out, c_in, k, k);
        let data = (0..shape.numel())
            .map(|_| T::from_f64(dist.sample(self.rng)))
            .collect();
        self.push(name, Tensor::new(shape, data).expect("glorot shape"))
    }

    fn conv_bn(
        &mut self,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> ConvBn {
        let weight = self.glorot(format!("{prefix}.conv.weight"), c_out, c_in, k);
        let gamma = self.push(
            format!("{prefix}.bn.gamma"),
            Tensor::full(Shape::new(c_out, 1, 1, 1), T::one()),
        );
        let beta = self.push(
            format!("{prefix}.bn.beta"),
            Tensor::zeros(Shape::new(c_out, 1, 1, 1)),
        );
        self.state_names.push(format!("{prefix}.bn"));
        self.states.push(BatchNormState::new(c_out));
        ConvBn {
            weight,
            gamma,
            beta,
            state: self.states.len() - 1,
            stride,
            pad: k / 2,
        }
    }

    fn block(&mut self, prefix: &str, c_in: usize, c_out: usize, stride: usize) -> ResidualBlock {
        let conv1 = self.conv_bn(&format!("{prefix}.conv1"), c_in, c_out, 3, stride);
        let conv2 = self.conv_bn(&format!("{prefix}.conv2"), c_out, c_out, 3, 1);
        let projection = (stride != 1 || c_in != c_out)
            .then(|| self.conv_bn(&format!("{prefix}.proj"), c_in, c_out, 1, stride));
        ResidualBlock {
            conv1,
            conv2,
            projection,
            in_channels: c_in,
            out_channels: c_out,
        }
    }

    fn head(&mut self, name: &str, widths: [usize; 3]) -> BranchHead {
        let mut levels = [(0, 0); 3];
        for (i, (&c, stride)) in widths.iter().zip([8, 16, 32]).enumerate() {
            let w = self.glorot(format!("head.{name}.s{stride}.weight"), 1, c, 1);
            let b = self.push(
                format!("head.{name}.s{stride}.bias"),
                Tensor::zeros(Shape::new(1, 1, 1, 1)),
            );
            levels[i] = (w, b);
        }
        BranchHead {
            name: name.to_string(),
            levels,
        }
    }
}

impl<T: Element> Model<T> {
    /// Builds a model with Glorot-uniform convolution weights, zero biases and
    /// identity batch-norm affine parameters, seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            state_names: Vec::new(),
            states: Vec::new(),
            rng: &mut rng,
        };
        let bb = &config.backbone;
        let stem = b.conv_bn("stem", bb.input_channels, bb.stem_channels, 7, 2);
        let mut stages = Vec::new();
        let mut c_in = bb.stem_channels;
        for s in 0..3 {
            let c_out = bb.stage_channels[s];
            let blocks = (0..bb.blocks_per_stage[s])
                .map(|i| {
                    b.block(
                        &format!("stage{}.block{i}", s + 1),
                        if i == 0 { c_in } else { c_out },
                        c_out,
                        if i == 0 { 2 } else { 1 },
                    )
                })
                .collect();
            stages.push(blocks);
            c_in = c_out;
        }
        let mut heads = vec![b.head("seg", bb.stage_channels)];
        if config.branches == 2 {
            heads.push(b.head("boundary", bb.stage_channels));
        }
        let Builder {
            names,
            params,
            state_names,
            states,
            ..
        } = b;
        Ok(Model {
            config,
            names,
            params,
            state_names,
            states,
            layout: Layout {
                stem,
                stages,
                heads,
            },
        })
    }

    /// Rebuilds a model from stored tensors. Every name produced by
    /// [`Model::new`] for `config` must be present with a matching shape.
    pub fn from_parts(
        config: ModelConfig,
        mut lookup: impl FnMut(&str) -> Option<Tensor<T>>,
        mut state_lookup: impl FnMut(&str) -> Option<BatchNormState<T>>,
    ) -> Result<Self> {
        let mut model = Model::new(config)?;
        for (name, slot) in model.names.iter().zip(model.params.iter_mut()) {
            let t = lookup(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {} but the model expects {}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        for (name, slot) in model.state_names.iter().zip(model.states.iter_mut()) {
            let s = state_lookup(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing batch-norm state {name}")))?;
            if s.mean.len() != slot.mean.len() || s.var.len() != slot.var.len() {
                return Err(Error::Checkpoint(format!(
                    "batch-norm state {name} has the wrong channel count"
                )));
            }
            *slot = s;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.param_index(name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.param_index(name).map(move |i| &mut self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn bn_states(&self) -> &[BatchNormState<T>] {
        &self.states
    }

    pub fn bn_states_mut(&mut self) -> &mut [BatchNormState<T>] {
        &mut self.states
    }

    pub fn stages(&self) -> &[Vec<ResidualBlock>] {
        &self.layout.stages
    }

    pub fn heads(&self) -> &[BranchHead] {
        &self.layout.heads
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            state_names: self.state_names.clone(),
            states: self.states.iter().map(BatchNormState::cast).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Records every parameter as a leaf, in parameter-index order.
    pub fn param_leaves(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.clone(), requires_grad))
            .collect()
    }

    /// Evaluation-mode forward pass (running batch-norm statistics).
    pub fn forward(&self, g: &mut Graph<T>, image: Var) -> Result<Prediction> {
        let params = self.param_leaves(g, false);
        self.multitask_forward(g, &params, image, &mut NormMode::Eval(&self.states))
    }

    /// Training-mode forward pass: batch statistics, running estimates updated.
    pub fn forward_train(
        &mut self,
        g: &mut Graph<T>,
        params: &[Var],
        image: Var,
    ) -> Result<Prediction> {
        let Model {
            config,
            layout,
            states,
            ..
        } = self;
        run_multitask(
            layout,
            config.backbone.input_channels,
            g,
            params,
            image,
            &mut NormMode::Train(states),
        )
    }

    /// Shared backbone once, then each branch head on the same features.
    pub fn multitask_forward(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        image: Var,
        norm: &mut NormMode<'_, T>,
    ) -> Result<Prediction> {
        run_multitask(
            &self.layout,
            self.config.backbone.input_channels,
            g,
            params,
            image,
            norm,
        )
    }

    /// Feature maps at 1/8, 1/16 and 1/32 of the input resolution.
    pub fn backbone_forward(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        image: Var,
        norm: &mut NormMode<'_, T>,
    ) -> Result<[Var; 3]> {
        run_backbone(
            &self.layout,
            self.config.backbone.input_channels,
            g,
            params,
            image,
            norm,
        )
    }
}

fn run_multitask<T: Element>(
    layout: &Layout,
    input_channels: usize,
    g: &mut Graph<T>,
    params: &[Var],
    image: Var,
    norm: &mut NormMode<'_, T>,
) -> Result<Prediction> {
    let [_, _, h, w] = g.shape(image).0;
    let feats = run_backbone(layout, input_channels, g, params, image, norm)?;
    let seg = branch_forward(g, params, &feats, &layout.heads[0], h, w)?;
    let boundary = match layout.heads.get(1) {
        Some(head) => Some(branch_forward(g, params, &feats, head, h, w)?),
        None => None,
    };
    Ok(Prediction { seg, boundary })
}

fn run_backbone<T: Element>(
    layout: &Layout,
    input_channels: usize,
    g: &mut Graph<T>,
    params: &[Var],
    image: Var,
    norm: &mut NormMode<'_, T>,
) -> Result<[Var; 3]> {
    let [_, c, h, w] = g.shape(image).0;
    if c != input_channels {
        return Err(Error::shape(format!(
            "model expects {input_channels} input channels, got {c}"
        )));
    }
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(Error::shape(format!(
            "input extent {h}x{w} must be a positive multiple of 32"
        )));
    }
    let x = conv_bn(g, params, image, &layout.stem, norm)?;
    let x = g.relu(x)?;
    let mut x = g.maxpool2d(x, 3, 2, 1)?;
    let mut feats = [x; 3];
    for (s, blocks) in layout.stages.iter().enumerate() {
        for block in blocks {
            x = residual_block_forward(g, params, x, block, norm)?;
        }
        feats[s] = x;
    }
    Ok(feats)
}

fn conv_bn<T: Element>(
    g: &mut Graph<T>,
    params: &[Var],
    x: Var,
    spec: &ConvBn,
    norm: &mut NormMode<'_, T>,
) -> Result<Var> {
    let y = g.conv2d(x, params[spec.weight], None, spec.stride, spec.pad)?;
    g.batchnorm2d(
        y,
        params[spec.gamma],
        params[spec.beta],
        norm.slot(spec.state),
    )
}

/// `ReLU(H(x) + shortcut(x))` with `H = conv-BN-ReLU-conv-BN`.
pub fn residual_block_forward<T: Element>(
    g: &mut Graph<T>,
    params: &[Var],
    x: Var,
    block: &ResidualBlock,
    norm: &mut NormMode<'_, T>,
) -> Result<Var> {
    let c = g.shape(x).c();
    if c != block.in_channels {
        return Err(Error::shape(format!(
            "residual block expects {} channels, got {c}",
            block.in_channels
        )));
    }
    let r = conv_bn(g, params, x, &block.conv1, norm)?;
    let r = g.relu(r)?;
    let r = conv_bn(g, params, r, &block.conv2, norm)?;
    let skip = match &block.projection {
        Some(p) => conv_bn(g, params, x, p, norm)?,
        None => x,
    };
    let sum = g.add(r, skip)?;
    g.relu(sum)
}

/// Per level: 1x1 conv to a single logit map, bilinear upsample to
/// `out_h x out_w`; the three maps are summed and squashed with a sigmoid.
pub fn branch_forward<T: Element>(
    g: &mut Graph<T>,
    params: &[Var],
    features: &[Var; 3],
    head: &BranchHead,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    let mut fused: Option<Var> = None;
    for (&f, &(w, b)) in features.iter().zip(&head.levels) {
        let logit = g.conv2d(f, params[w], Some(params[b]), 1, 0)?;
        let up = g.upsample_bilinear(logit, out_h, out_w)?;
        fused = Some(match fused {
            Some(acc) => g.add(acc, up)?,
            None => up,
        });
    }
    g.sigmoid(fused.expect("three levels"))
}

/// `L_s + lambda * L_b`, both summed binary cross-entropies.
pub fn joint_loss<T: Element>(
    g: &mut Graph<T>,
    seg: Var,
    boundary: Option<Var>,
    seg_target: &Tensor<T>,
    boundary_target: Option<&Tensor<T>>,
    lambda: f64,
) -> Result<Var> {
    let ls = g.bce_sum(seg, seg_target)?;
    match (boundary, boundary_target) {
        (Some(b), Some(bt)) => {
            let lb = g.bce_sum(b, bt)?;
            let lb = g.scale(lb, T::from_f64(lambda))?;
            g.add(ls, lb)
        }
        (None, _) => Ok(ls),
        (Some(_), None) => Err(Error::shape(
            "boundary prediction supplied without a boundary target",
        )),
    }
}

/// Central-difference check of every parameter gradient of the
/// [`ModelConfig::gradcheck_toy`] network under the joint loss, in `f64`, on
/// a random 64x64 image with random targets. Everything is drawn from `seed`.
pub fn toy_gradient_check(seed: u64, lambda: f64, eps: f64) -> Result<GradCheckReport> {
    let mut cfg = ModelConfig::gradcheck_toy(seed);
    cfg.lambda = lambda;
    let model: Model<f64> = Model::<f32>::new(cfg)?.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let image: Vec<f64> = (0..3 * 64 * 64)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let image = Tensor::new(Shape::new(1, 3, 64, 64), image)?;
    let mut mask = || -> Result<Tensor<f64>> {
        let d = (0..64 * 64)
            .map(|_| rng.random_bool(0.4) as u8 as f64)
            .collect();
        Tensor::new(Shape::new(1, 1, 64, 64), d)
    };
    let (y, b) = (mask()?, mask()?);
    grad_check(model.params(), eps, |g, vars| {
        let x = g.leaf(image.clone(), false);
        let mut states = model.bn_states().to_vec();
        let p = model.multitask_forward(g, vars, x, &mut NormMode::Train(&mut states))?;
        joint_loss(g, p.seg, p.boundary, &y, Some(&b), lambda)
    })
}
