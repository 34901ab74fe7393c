use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.0,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Float = f32> {
    pub config: AdamConfig,
    pub step: usize,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. Non-finite gradients abort the step without touching any
    /// state.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Config(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical {
                step: self.step,
                detail: format!("non-finite gradient for {}", params.names()[i]),
            });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (one, lr_t, eps_t) = (T::one(), T::from_f64(lr), T::from_f64(eps));
        let (inv_c1, inv_c2) = (T::from_f64(1.0 / c1), T::from_f64(1.0 / c2));
        for ((p, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mh = *mi * inv_c1;
                let vh = *vi * inv_c2;
                *pi -= lr_t * mh / (vh.sqrt() + eps_t);
            }
        }
        Ok(())
    }
}

/// `shadow ← decay·shadow + (1 − decay)·live`.
pub fn ema_update<T: Float>(shadow: &mut ParamSet<T>, live: &ParamSet<T>, decay: f64) -> Result<()> {
    if shadow.names() != live.names() {
        return Err(Error::Config("EMA shadow does not match live parameters".into()));
    }
    let d = T::from_f64(decay);
    let r = T::from_f64(1.0 - decay);
    for (s, l) in shadow.tensors_mut().iter_mut().zip(live.tensors()) {
        if s.shape() != l.shape() {
            return Err(Error::shape("ema_update", s.shape(), l.shape()));
        }
        for (a, &b) in s.data_mut().iter_mut().zip(l.data()) {
            *a = d * *a + r * b;
        }
    }
    Ok(())
}

/// Learning rates for one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSet {
    pub g: f64,
    pub d_i: f64,
    pub d_h: f64,
}

impl LrSet {
    pub fn scaled(self, f: f64) -> Self {
        Self {
            g: self.g * f,
            d_i: self.d_i * f,
            d_h: self.d_h * f,
        }
    }
}

/// Staged decay schedule: constant for the first `constant_epochs`, then
/// multiplied by `rate` once per `every` elapsed epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: LrSet,
    pub constant_epochs: usize,
    pub rate: f64,
    pub every: usize,
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> LrSet {
        let elapsed = epoch.saturating_sub(self.constant_epochs);
        let k = elapsed / self.every.max(1);
        self.base.scaled(self.rate.powi(k as i32))
    }
}
