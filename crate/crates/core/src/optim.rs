//! First-order optimizers: Nesterov-accelerated Adam, Adam, and SGD with
//! momentum. Updates are computed in `f64` and stored back in the parameter
//! element type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Exponent scale ψ of the momentum schedule `β1 (1 - 0.5 * 0.96^(t ψ))`.
    pub schedule_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule_decay: 0.004,
        }
    }
}

impl NadamConfig {
    /// Momentum coefficient `μ_t` for step `t` (1-based).
    pub fn momentum(&self, t: u64) -> f64 {
        self.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.schedule_decay))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 2e-4,
            momentum: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Nadam(NadamConfig),
    Adam(AdamConfig),
    Sgd(SgdConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Nadam(NadamConfig::default())
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::Nadam(c) => c.lr,
            OptimizerConfig::Adam(c) => c.lr,
            OptimizerConfig::Sgd(c) => c.lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            OptimizerConfig::Nadam(c) => {
                beta_ok(c.beta1)
                    && beta_ok(c.beta2)
                    && positive(c.lr)
                    && positive(c.eps)
                    && positive(c.schedule_decay)
            }
            OptimizerConfig::Adam(c) => {
                beta_ok(c.beta1) && beta_ok(c.beta2) && positive(c.lr) && positive(c.eps)
            }
            OptimizerConfig::Sgd(c) => positive(c.lr) && (0.0..1.0).contains(&c.momentum),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

fn beta_ok(b: f64) -> bool {
    b > 0.0 && b < 1.0
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

/// Per-parameter moments plus the step counter.
///
/// For SGD `first` holds the velocity and `second` stays empty.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState<T = f32> {
    pub step: u64,
    /// Running product of the Nadam momentum schedule, `Π_{i<=t} μ_i`.
    pub mu_product: f64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Element> OptState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        OptState {
            step: 0,
            mu_product: 1.0,
            first: zeros(),
            second: zeros(),
        }
    }

    fn check(&self, params: &[Tensor<T>], grads: &[Tensor<T>], need_second: bool) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::shape(format!(
                "optimizer got {} parameters, {} gradients and {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        if need_second && self.second.len() != params.len() {
            return Err(Error::shape("second-moment slots do not match parameters"));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let m = &self.first[i];
            if g.shape() != p.shape()
                || m.shape() != p.shape()
                || (need_second && self.second[i].shape() != p.shape())
            {
                return Err(Error::shape(format!(
                    "parameter {i}: shape {} does not match its gradient or moments",
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        Ok(())
    }
}

/// One Nadam step. Nothing is modified if any gradient is non-finite.
pub fn nadam_step<T: Element>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptState<T>,
    cfg: &NadamConfig,
) -> Result<()> {
    state.check(params, grads, true)?;
    let t = state.step + 1;
    let mu_t = cfg.momentum(t);
    let mu_next = cfg.momentum(t + 1);
    let prod_t = state.mu_product * mu_t;
    let prod_next = prod_t * mu_next;
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            let g = gv.as_f64();
            let m_new = cfg.beta1 * mv.as_f64() + (1.0 - cfg.beta1) * g;
            let v_new = cfg.beta2 * vv.as_f64() + (1.0 - cfg.beta2) * g * g;
            let m_bar = mu_next * m_new / (1.0 - prod_next) + (1.0 - mu_t) * g / (1.0 - prod_t);
            let denom = (v_new / bc2).sqrt() + cfg.eps;
            *pv = T::from_f64(pv.as_f64() - cfg.lr * m_bar / denom);
            *mv = T::from_f64(m_new);
            *vv = T::from_f64(v_new);
        }
    }
    state.step = t;
    state.mu_product = prod_t;
    Ok(())
}

/// One bias-corrected Adam step.
pub fn adam_step<T: Element>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    state.check(params, grads, true)?;
    let t = state.step + 1;
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            let g = gv.as_f64();
            let m_new = cfg.beta1 * mv.as_f64() + (1.0 - cfg.beta1) * g;
            let v_new = cfg.beta2 * vv.as_f64() + (1.0 - cfg.beta2) * g * g;
            let step = cfg.lr * (m_new / bc1) / ((v_new / bc2).sqrt() + cfg.eps);
            *pv = T::from_f64(pv.as_f64() - step);
            *mv = T::from_f64(m_new);
            *vv = T::from_f64(v_new);
        }
    }
    state.step = t;
    Ok(())
}

/// `velocity = momentum * velocity + g; θ -= lr * velocity`.
pub fn sgd_momentum_step<T: Element>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptState<T>,
    cfg: &SgdConfig,
) -> Result<()> {
    state.check(params, grads, false)?;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let vel = state.first[i].data_mut();
        for ((pv, &gv), u) in p.data_mut().iter_mut().zip(g.data()).zip(vel) {
            let u_new = cfg.momentum * u.as_f64() + gv.as_f64();
            *pv = T::from_f64(pv.as_f64() - cfg.lr * u_new);
            *u = T::from_f64(u_new);
        }
    }
    state.step += 1;
    Ok(())
}

/// An optimizer configuration bound to its state.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T = f32> {
    pub config: OptimizerConfig,
    pub state: OptState<T>,
}

impl<T: Element> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &[Tensor<T>]) -> Result<Self> {
        config.validate()?;
        let mut state = OptState::new(params);
        if matches!(config, OptimizerConfig::Sgd(_)) {
            state.second.clear();
        }
        Ok(Optimizer { config, state })
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        match &self.config {
            OptimizerConfig::Nadam(c) => nadam_step(params, grads, &mut self.state, c),
            OptimizerConfig::Adam(c) => adam_step(params, grads, &mut self.state, c),
            OptimizerConfig::Sgd(c) => sgd_momentum_step(params, grads, &mut self.state, c),
        }
    }
}
