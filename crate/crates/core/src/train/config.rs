use crate::data::AugmentKind;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::nn::SkipMode;

use super::optim::{LrSchedule, LrSet};

/// Architecture of every network in a [`ModelSet`](super::ModelSet).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub num_attrs: usize,
    pub g_width: usize,
    pub d_width: usize,
    pub c_width: usize,
    pub c_hidden: usize,
    pub skip: SkipMode,
    /// Build and train the high-frequency discriminators.
    pub highfreq_disc: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            num_attrs: 3,
            g_width: 16,
            d_width: 16,
            c_width: 16,
            c_hidden: 16,
            skip: SkipMode::HighFreq,
            highfreq_disc: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || !self.image_size.is_power_of_two() {
            return Err(Error::Config(format!("image_size {} must be a power of two >= 8", self.image_size)));
        }
        if [self.num_attrs, self.g_width, self.d_width, self.c_width, self.c_hidden].contains(&0) {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Where the real samples of the adversarial terms come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RealSource {
    /// A separately drawn batch.
    Sampled,
    /// The generator's own input batch.
    Input,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Minimum held-out mean accuracy before GAN training may start.
    pub accuracy_gate: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 32,
            lr: 2e-3,
            accuracy_gate: 0.95,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Epochs at constant learning rate.
    pub epochs: usize,
    /// Further epochs with staged decay.
    pub decay_epochs: usize,
    pub decay_rate: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: LrSet,
    pub beta1: f64,
    pub beta2: f64,
    pub ema_decay: f64,
    pub weights: LossWeights,
    pub sn_iters: usize,
    pub cycle_augment: Option<AugmentKind>,
    pub disable_ar_loss: bool,
    /// Classify every attribute of the edited image against its target,
    /// not only the changed ones.
    pub ac_all_attrs: bool,
    pub real_source: RealSource,
    /// Cap on steps per epoch (`0` = one pass over the pool).
    pub max_steps_per_epoch: usize,
    pub classifier: ClassifierTrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            decay_epochs: 20,
            decay_rate: 0.999,
            decay_every: 10,
            batch_size: 16,
            seed: 0,
            lr: LrSet {
                g: 5e-4,
                d_i: 2e-3,
                d_h: 2e-3,
            },
            beta1: 0.0,
            beta2: 0.999,
            ema_decay: 0.999,
            weights: LossWeights::default(),
            sn_iters: 1,
            cycle_augment: None,
            disable_ar_loss: false,
            ac_all_attrs: true,
            real_source: RealSource::Sampled,
            max_steps_per_epoch: 0,
            classifier: ClassifierTrainConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.epochs + self.decay_epochs
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            constant_epochs: self.epochs,
            rate: self.decay_rate,
            every: self.decay_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must be in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        if [self.lr.g, self.lr.d_i, self.lr.d_h].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}
