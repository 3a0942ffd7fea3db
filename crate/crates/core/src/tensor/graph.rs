use super::kernels::{self, ConvGeom};
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Batch-norm running-average momentum (weight kept on the old estimate).
pub const BN_MOMENTUM: f64 = 0.9;
/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn cast<U: Element>(&self) -> BatchNormState<U> {
        BatchNormState {
            mean: self.mean.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            var: self.var.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Batch statistics (training) or running statistics (evaluation).
pub enum BnMode<'a, T> {
    Train(&'a mut BatchNormState<T>),
    Eval(&'a BatchNormState<T>),
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Upsample {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Bce {
        prob: Var,
        target: Vec<T>,
        scale: T,
    },
    Sum {
        input: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Reverse-mode tape. Nodes are appended in execution order, so the node list
/// is already topologically sorted; [`Graph::backward`] walks it in reverse.
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

/// How a loss over pixels is reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    /// Per-pixel mean, used for logging only.
    Mean,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::new(self.shape(v), g.clone()).expect("gradient shape"))
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        // Constant subgraphs keep no backward state.
        let op = if requires_grad || matches!(op, Op::Leaf) {
            op
        } else {
            Op::Leaf
        };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn finite(name: &str, data: &[T]) -> Result<()> {
        if data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(name.to_string()))
        }
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, c_in, h, w] = self.shape(input).0;
        let [c_out, wc_in, kh, kw] = self.shape(weight).0;
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv2d: input has {c_in} channels but weight {} expects {wc_in}",
                self.shape(weight)
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!(
                "conv2d: only square kernels are supported, got {kh}x{kw}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b).numel() != c_out {
                return Err(Error::shape(format!(
                    "conv2d: bias {} does not match {c_out} output channels",
                    self.shape(b)
                )));
            }
        }
        if stride == 0 {
            return Err(Error::shape("conv2d: stride must be positive"));
        }
        let (oh, ow) = match (
            kernels::out_extent(h, kh, stride, pad),
            kernels::out_extent(w, kw, stride, pad),
        ) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d: {kh}x{kw} kernel does not fit {h}x{w} input with pad {pad}"
                )))
            }
        };
        let geom = ConvGeom {
            c_in,
            h,
            w,
            k: kh,
            stride,
            pad,
            oh,
            ow,
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            n,
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            c_out,
            &geom,
        );
        Self::finite("conv2d", &out)?;
        let rg = self.requires_grad(input)
            || self.requires_grad(weight)
            || bias.is_some_and(|b| self.requires_grad(b));
        let value = Tensor::new(Shape::new(n, c_out, oh, ow), out)?;
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let shape = self.shape(input);
        if stride == 0 {
            return Err(Error::shape("maxpool2d: stride must be positive"));
        }
        if pad >= k {
            return Err(Error::shape(format!(
                "maxpool2d: padding {pad} leaves windows with no input under a {k}x{k} kernel"
            )));
        }
        let (oh, ow) = match (
            kernels::out_extent(shape.h(), k, stride, pad),
            kernels::out_extent(shape.w(), k, stride, pad),
        ) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(Error::shape(format!(
                    "maxpool2d: {k}x{k} window larger than padded {}x{} input",
                    shape.h(),
                    shape.w()
                )))
            }
        };
        let (out, argmax) =
            kernels::maxpool_forward(self.value(input).data(), shape, k, stride, pad, oh, ow);
        Self::finite("maxpool2d", &out)?;
        let value = Tensor::new(Shape::new(shape.n(), shape.c(), oh, ow), out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::MaxPool { input, argmax }))
    }

    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<Var> {
        let shape = self.shape(input);
        let [n, c, h, w] = shape.0;
        if self.shape(gamma).numel() != c || self.shape(beta).numel() != c {
            return Err(Error::shape(format!(
                "batchnorm2d: affine parameters must have {c} entries"
            )));
        }
        let count = n * h * w;
        if count == 0 {
            return Err(Error::shape("batchnorm2d: empty batch/spatial extent"));
        }
        let plane = h * w;
        let x = self.value(input).data();
        let (mean, var, batch_stats) = match &mode {
            BnMode::Train(_) => {
                if count < 2 {
                    return Err(Error::shape(
                        "batchnorm2d: training needs at least two values per channel",
                    ));
                }
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for ch in 0..c {
                    let planes =
                        || (0..n).map(move |b| &x[(b * c + ch) * plane..(b * c + ch + 1) * plane]);
                    let s: f64 = planes().map(|p| sum_f64(p)).sum();
                    let m = s / count as f64;
                    let mt = T::from_f64(m);
                    let sq: f64 = planes()
                        .map(|p| {
                            let mut acc = T::zero();
                            for &v in p {
                                let d = v - mt;
                                acc = acc + d * d;
                            }
                            acc.as_f64()
                        })
                        .sum();
                    mean[ch] = m;
                    var[ch] = sq / count as f64;
                }
                (mean, var, true)
            }
            BnMode::Eval(state) => (
                state.mean.iter().map(|v| v.as_f64()).collect(),
                state.var.iter().map(|v| v.as_f64()).collect(),
                false,
            ),
        };
        let inv_std: Vec<T> = var
            .iter()
            .map(|v| T::from_f64(1.0 / (v + BN_EPS).sqrt()))
            .collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for ((i, xp), (hp, op)) in x
            .chunks(plane)
            .enumerate()
            .zip(xhat.chunks_mut(plane).zip(out.chunks_mut(plane)))
        {
            let ch = i % c;
            let m = T::from_f64(mean[ch]);
            let (is, ga, be) = (inv_std[ch], gv[ch], bv[ch]);
            for ((&xv, h), o) in xp.iter().zip(hp.iter_mut()).zip(op.iter_mut()) {
                let xh = (xv - m) * is;
                *h = xh;
                *o = ga * xh + be;
            }
        }
        Self::finite("batchnorm2d", &out)?;
        if let BnMode::Train(state) = mode {
            let keep = T::from_f64(BN_MOMENTUM);
            let take = T::from_f64(1.0 - BN_MOMENTUM);
            for ch in 0..c {
                state.mean[ch] = keep * state.mean[ch] + take * T::from_f64(mean[ch]);
                state.var[ch] = keep * state.var[ch] + take * T::from_f64(var[ch]);
            }
        }
        let rg = self.requires_grad(input) || self.requires_grad(gamma) || self.requires_grad(beta);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape();
        let (out, op): (Vec<T>, _) = match kind {
            Activation::Relu => (
                x.data().iter().map(|&v| v.max(T::zero())).collect(),
                Op::Relu { input },
            ),
            Activation::Sigmoid => (
                x.data().iter().map(|&v| sigmoid(v)).collect(),
                Op::Sigmoid { input },
            ),
        };
        Self::finite("activation", &out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor::new(shape, out)?, rg, op))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn upsample_bilinear(
        &mut self,
        input: Var,
        target_h: usize,
        target_w: usize,
    ) -> Result<Var> {
        if target_h == 0 || target_w == 0 {
            return Err(Error::shape("upsample_bilinear: zero target extent"));
        }
        let shape = self.shape(input);
        if shape.h() == 0 || shape.w() == 0 {
            return Err(Error::shape("upsample_bilinear: empty input plane"));
        }
        let out = kernels::upsample_forward(self.value(input).data(), shape, target_h, target_w);
        Self::finite("upsample_bilinear", &out)?;
        let value = Tensor::new(Shape::new(shape.n(), shape.c(), target_h, target_w), out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::Upsample { input }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "add: {} vs {}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        Self::finite("add", &out)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let value = Tensor::new(self.shape(a), out)?;
        Ok(self.push(value, rg, Op::Add { a, b }))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let out: Vec<T> = self
            .value(input)
            .data()
            .iter()
            .map(|&v| v * factor)
            .collect();
        Self::finite("scale", &out)?;
        let rg = self.requires_grad(input);
        let value = Tensor::new(self.shape(input), out)?;
        Ok(self.push(value, rg, Op::Scale { input, factor }))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self
            .value(input)
            .data()
            .iter()
            .fold(0.0f64, |a, v| a + v.as_f64());
        let out = T::from_f64(s);
        Self::finite("sum", &[out])?;
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor::scalar(out), rg, Op::Sum { input }))
    }

    /// Summed binary cross-entropy of probabilities against a {0,1} target.
    pub fn bce_sum(&mut self, prob: Var, target: &Tensor<T>) -> Result<Var> {
        self.bce(prob, target, Reduction::Sum)
    }

    pub fn bce(&mut self, prob: Var, target: &Tensor<T>, reduction: Reduction) -> Result<Var> {
        if self.shape(prob) != target.shape() {
            return Err(Error::shape(format!(
                "bce: probabilities {} vs target {}",
                self.shape(prob),
                target.shape()
            )));
        }
        let lo = T::from_f64(BCE_CLAMP);
        let hi = T::one() - lo;
        let mut acc = 0.0f64;
        for (&p, &y) in self.value(prob).data().iter().zip(target.data()) {
            let p = p.max(lo).min(hi).as_f64();
            let y = y.as_f64();
            acc -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / target.len().max(1) as f64,
        };
        let out = T::from_f64(acc * scale);
        Self::finite("bce", &[out])?;
        let rg = self.requires_grad(prob);
        Ok(self.push(
            Tensor::scalar(out),
            rg,
            Op::Bce {
                prob,
                target: target.data().to_vec(),
                scale: T::from_f64(scale),
            },
        ))
    }

    /// Populates gradients of every requires-grad node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != Shape::scalar() {
            return Err(Error::shape(format!(
                "backward: loss must be scalar, got {}",
                self.shape(loss)
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &gout)?;
            }
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a = *a + d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&mut self, i: usize, gout: &[T]) -> Result<()> {
        let mut pending: Vec<(Var, Vec<T>)> = Vec::new();
        {
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    let x = self.value(*input);
                    let wt = self.value(*weight);
                    let grads = kernels::conv2d_backward(
                        x.data(),
                        x.shape().n(),
                        wt.data(),
                        wt.shape().n(),
                        geom,
                        gout,
                        self.requires_grad(*input),
                        self.requires_grad(*weight),
                        bias.is_some_and(|b| self.requires_grad(b)),
                    );
                    if let Some(dx) = grads.dx {
                        pending.push((*input, dx));
                    }
                    if let Some(dw) = grads.dw {
                        pending.push((*weight, dw));
                    }
                    if let (Some(b), Some(db)) = (bias, grads.db) {
                        pending.push((*b, db));
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let mut dx = vec![T::zero(); self.shape(*input).numel()];
                    for (&src, &g) in argmax.iter().zip(gout) {
                        dx[src] = dx[src] + g;
                    }
                    pending.push((*input, dx));
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let [n, c, h, w] = self.shape(*input).0;
                    let plane = h * w.max(1);
                    let count = (n * plane) as f64;
                    let gv = self.value(*gamma).data();
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    let mut sum_dy = vec![0.0f64; c];
                    let mut sum_dy_xhat = vec![0.0f64; c];
                    for (i, (gp, hp)) in gout.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                        let ch = i % c;
                        let mut sd = T::zero();
                        let mut sdx = T::zero();
                        for (&gv, &hv) in gp.iter().zip(hp) {
                            sd = sd + gv;
                            sdx = sdx + gv * hv;
                        }
                        sum_dy[ch] += sd.as_f64();
                        sum_dy_xhat[ch] += sdx.as_f64();
                    }
                    for ch in 0..c {
                        dgamma[ch] = T::from_f64(sum_dy_xhat[ch]);
                        dbeta[ch] = T::from_f64(sum_dy[ch]);
                    }
                    if self.requires_grad(*input) {
                        let mut dx = vec![T::zero(); gout.len()];
                        for (i, ((dp, gp), hp)) in dx
                            .chunks_mut(plane)
                            .zip(gout.chunks(plane))
                            .zip(xhat.chunks(plane))
                            .enumerate()
                        {
                            let ch = i % c;
                            let k = gv[ch] * inv_std[ch];
                            if *batch_stats {
                                let mdy = T::from_f64(sum_dy[ch] / count);
                                let mdyx = T::from_f64(sum_dy_xhat[ch] / count);
                                for ((d, &g), &h) in dp.iter_mut().zip(gp).zip(hp) {
                                    *d = k * (g - mdy - h * mdyx);
                                }
                            } else {
                                for (d, &g) in dp.iter_mut().zip(gp) {
                                    *d = k * g;
                                }
                            }
                        }
                        pending.push((*input, dx));
                    }
                    pending.push((*gamma, dgamma));
                    pending.push((*beta, dbeta));
                }
                Op::Relu { input } => {
                    let x = self.value(*input).data();
                    let dx = x
                        .iter()
                        .zip(gout)
                        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    pending.push((*input, dx));
                }
                Op::Sigmoid { input } => {
                    let y = node.value.data();
                    let dx = y
                        .iter()
                        .zip(gout)
                        .map(|(&s, &g)| g * s * (T::one() - s))
                        .collect();
                    pending.push((*input, dx));
                }
                Op::Upsample { input } => {
                    let out = node.value.shape();
                    let dx = kernels::upsample_backward(gout, self.shape(*input), out.h(), out.w());
                    pending.push((*input, dx));
                }
                Op::Add { a, b } => {
                    pending.push((*a, gout.to_vec()));
                    pending.push((*b, gout.to_vec()));
                }
                Op::Bce {
                    prob,
                    target,
                    scale,
                } => {
                    let lo = T::from_f64(BCE_CLAMP);
                    let hi = T::one() - lo;
                    let g = gout[0] * *scale;
                    let dx = self
                        .value(*prob)
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(&p, &y)| {
                            // clamp is flat outside [lo, hi]
                            if p < lo || p > hi {
                                T::zero()
                            } else {
                                g * ((T::one() - y) / (T::one() - p) - y / p)
                            }
                        })
                        .collect();
                    pending.push((*prob, dx));
                }
                Op::Sum { input } => {
                    pending.push((*input, vec![gout[0]; self.shape(*input).numel()]));
                }
                Op::Scale { input, factor } => {
                    pending.push((*input, gout.iter().map(|&g| g * *factor).collect()));
                }
            }
        }
        for (v, d) in pending {
            Self::finite("backward", &d)?;
            self.accumulate(v, d);
        }
        Ok(())
    }
}

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the logarithm.
pub const BCE_CLAMP: f64 = 1e-7;

fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Plane sums accumulate in the element type, then widen; the order is fixed.
fn sum_f64<T: Element>(p: &[T]) -> f64 {
    let mut acc = T::zero();
    for &v in p {
        acc = acc + v;
    }
    acc.as_f64()
}
