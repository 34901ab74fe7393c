//! Flat `key = value` run configuration.
//!
//! Every default of the experiment pipeline has a key. `#` starts a comment,
//! blank lines are ignored and unknown keys are rejected. The canonical
//! rendering ([`RunConfig::to_text`]) lists every key in a fixed order and
//! its SHA-256 is the config hash recorded in checkpoints and manifests.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{AugmentKind, PseudoLabelConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::nn::SkipMode;
use crate::train::{ModelConfig, RealSource, TrainConfig};

/// Dataset sizes and seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub synth: SynthConfig,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
    /// Fraction of the training pool that keeps ground-truth labels; the
    /// rest is pseudo-labelled by the classifier.
    pub labeled_fraction: f64,
    pub pseudo: PseudoLabelConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            train_size: 512,
            test_size: 128,
            seed: 1,
            labeled_fraction: 1.0,
            pseudo: PseudoLabelConfig::default(),
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq)]
#[derive(Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Write `ckpt_NNN` every this many epochs (`0` = final only).
    pub checkpoint_every: usize,
}


fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for key {key}"))),
    }
}

/// Band selection of the generator skips, separate from the two flags that
/// replace it.
fn band_mode(skip: SkipMode) -> SkipMode {
    match skip {
        SkipMode::Off | SkipMode::Vanilla => SkipMode::HighFreq,
        s => s,
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 46] = [
        "image_size",
        "num_attrs",
        "g_width",
        "d_width",
        "c_width",
        "c_hidden",
        "skip_band_mode",
        "disable_wavelet_skip",
        "vanilla_skip",
        "disable_dh",
        "epochs",
        "decay_epochs",
        "decay_rate",
        "decay_every",
        "batch_size",
        "seed",
        "lr_g",
        "lr_d_i",
        "lr_d_h",
        "beta1",
        "beta2",
        "ema_decay",
        "lambda_gan_i",
        "lambda_gan_h",
        "lambda_cyc",
        "lambda_ac",
        "lambda_ar",
        "sn_iters",
        "cycle_augment",
        "disable_ar_loss",
        "ac_all_attrs",
        "real_source",
        "max_steps_per_epoch",
        "classifier_epochs",
        "classifier_batch_size",
        "classifier_lr",
        "accuracy_gate",
        "dataset_seed",
        "train_size",
        "test_size",
        "texture_amp",
        "attr_prob",
        "labeled_fraction",
        "pseudo_threshold",
        "override_gate",
        "checkpoint_every",
    ];

    pub fn get(&self, key: &str) -> Result<String> {
        let m = &self.model;
        let t = &self.train;
        let d = &self.data;
        Ok(match key {
            "image_size" => m.image_size.to_string(),
            "num_attrs" => m.num_attrs.to_string(),
            "g_width" => m.g_width.to_string(),
            "d_width" => m.d_width.to_string(),
            "c_width" => m.c_width.to_string(),
            "c_hidden" => m.c_hidden.to_string(),
            "skip_band_mode" => band_mode(m.skip).name().to_string(),
            "disable_wavelet_skip" => (m.skip == SkipMode::Off).to_string(),
            "vanilla_skip" => (m.skip == SkipMode::Vanilla).to_string(),
            "disable_dh" => (!m.highfreq_disc).to_string(),
            "epochs" => t.epochs.to_string(),
            "decay_epochs" => t.decay_epochs.to_string(),
            "decay_rate" => t.decay_rate.to_string(),
            "decay_every" => t.decay_every.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "seed" => t.seed.to_string(),
            "lr_g" => t.lr.g.to_string(),
            "lr_d_i" => t.lr.d_i.to_string(),
            "lr_d_h" => t.lr.d_h.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "ema_decay" => t.ema_decay.to_string(),
            "lambda_gan_i" => t.weights.gan_i.to_string(),
            "lambda_gan_h" => t.weights.gan_h.to_string(),
            "lambda_cyc" => t.weights.cyc.to_string(),
            "lambda_ac" => t.weights.ac.to_string(),
            "lambda_ar" => t.weights.ar.to_string(),
            "sn_iters" => t.sn_iters.to_string(),
            "cycle_augment" => t.cycle_augment.map_or("none", |a| a.name()).to_string(),
            "disable_ar_loss" => t.disable_ar_loss.to_string(),
            "ac_all_attrs" => t.ac_all_attrs.to_string(),
            "real_source" => match t.real_source {
                RealSource::Sampled => "sampled",
                RealSource::Input => "input",
            }
            .to_string(),
            "max_steps_per_epoch" => t.max_steps_per_epoch.to_string(),
            "classifier_epochs" => t.classifier.epochs.to_string(),
            "classifier_batch_size" => t.classifier.batch_size.to_string(),
            "classifier_lr" => t.classifier.lr.to_string(),
            "accuracy_gate" => t.classifier.accuracy_gate.to_string(),
            "dataset_seed" => d.seed.to_string(),
            "train_size" => d.train_size.to_string(),
            "test_size" => d.test_size.to_string(),
            "texture_amp" => d.synth.detail_texture_amp.to_string(),
            "attr_prob" => d.synth.attr_prob.to_string(),
            "labeled_fraction" => d.labeled_fraction.to_string(),
            "pseudo_threshold" => d.pseudo.threshold.to_string(),
            "override_gate" => d.pseudo.override_gate.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        })
    }

    /// Set one key. Skip-related keys interact: `disable_wavelet_skip` and
    /// `vanilla_skip` override `skip_band_mode` and are checked in
    /// [`validate`](Self::validate).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "image_size" => {
                m.image_size = parse(key, value)?;
                d.synth.size = m.image_size;
            }
            "num_attrs" => {
                m.num_attrs = parse(key, value)?;
                d.synth.num_attrs = m.num_attrs;
            }
            "g_width" => m.g_width = parse(key, value)?,
            "d_width" => m.d_width = parse(key, value)?,
            "c_width" => m.c_width = parse(key, value)?,
            "c_hidden" => m.c_hidden = parse(key, value)?,
            "skip_band_mode" => {
                let mode = match value {
                    "high" | "high_only" => SkipMode::HighFreq,
                    "low" | "low_only" => SkipMode::LowFreq,
                    "all" => SkipMode::AllFreq,
                    _ => return Err(Error::Config(format!("invalid skip_band_mode {value:?} (high|low|all)"))),
                };
                if !matches!(m.skip, SkipMode::Off | SkipMode::Vanilla) {
                    m.skip = mode;
                }
            }
            "disable_wavelet_skip" => {
                if parse_bool(key, value)? {
                    if m.skip == SkipMode::Vanilla {
                        return Err(Error::Config("disable_wavelet_skip and vanilla_skip are exclusive".into()));
                    }
                    m.skip = SkipMode::Off;
                } else if m.skip == SkipMode::Off {
                    m.skip = SkipMode::HighFreq;
                }
            }
            "vanilla_skip" => {
                if parse_bool(key, value)? {
                    if m.skip == SkipMode::Off {
                        return Err(Error::Config("disable_wavelet_skip and vanilla_skip are exclusive".into()));
                    }
                    m.skip = SkipMode::Vanilla;
                } else if m.skip == SkipMode::Vanilla {
                    m.skip = SkipMode::HighFreq;
                }
            }
            "disable_dh" => m.highfreq_disc = !parse_bool(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "decay_epochs" => t.decay_epochs = parse(key, value)?,
            "decay_rate" => t.decay_rate = parse(key, value)?,
            "decay_every" => t.decay_every = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "lr_g" => t.lr.g = parse(key, value)?,
            "lr_d_i" => t.lr.d_i = parse(key, value)?,
            "lr_d_h" => t.lr.d_h = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "ema_decay" => t.ema_decay = parse(key, value)?,
            "lambda_gan_i" => t.weights.gan_i = parse(key, value)?,
            "lambda_gan_h" => t.weights.gan_h = parse(key, value)?,
            "lambda_cyc" => t.weights.cyc = parse(key, value)?,
            "lambda_ac" => t.weights.ac = parse(key, value)?,
            "lambda_ar" => t.weights.ar = parse(key, value)?,
            "sn_iters" => t.sn_iters = parse(key, value)?,
            "cycle_augment" => {
                t.cycle_augment = match value {
                    "none" => None,
                    v => Some(AugmentKind::parse(v)?),
                }
            }
            "disable_ar_loss" => t.disable_ar_loss = parse_bool(key, value)?,
            "ac_all_attrs" => t.ac_all_attrs = parse_bool(key, value)?,
            "real_source" => {
                t.real_source = match value {
                    "sampled" => RealSource::Sampled,
                    "input" => RealSource::Input,
                    _ => return Err(Error::Config(format!("invalid real_source {value:?} (sampled|input)"))),
                }
            }
            "max_steps_per_epoch" => t.max_steps_per_epoch = parse(key, value)?,
            "classifier_epochs" => t.classifier.epochs = parse(key, value)?,
            "classifier_batch_size" => t.classifier.batch_size = parse(key, value)?,
            "classifier_lr" => t.classifier.lr = parse(key, value)?,
            "accuracy_gate" => {
                t.classifier.accuracy_gate = parse(key, value)?;
                d.pseudo.accuracy_gate = t.classifier.accuracy_gate;
            }
            "dataset_seed" => d.seed = parse(key, value)?,
            "train_size" => d.train_size = parse(key, value)?,
            "test_size" => d.test_size = parse(key, value)?,
            "texture_amp" => d.synth.detail_texture_amp = parse(key, value)?,
            "attr_prob" => d.synth.attr_prob = parse(key, value)?,
            "labeled_fraction" => d.labeled_fraction = parse(key, value)?,
            "pseudo_threshold" => d.pseudo.threshold = parse(key, value)?,
            "override_gate" => d.pseudo.override_gate = parse_bool(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical rendering: every key, fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let v = self.get(key).expect("every listed key is known");
            writeln!(s, "{key} = {v}").expect("write to string");
        }
        s
    }

    /// Hex SHA-256 of [`to_text`](Self::to_text).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.synth.validate()?;
        if self.data.synth.size != self.model.image_size || self.data.synth.num_attrs != self.model.num_attrs {
            return Err(Error::Config("dataset geometry does not match the model".into()));
        }
        if self.data.train_size < self.train.batch_size {
            return Err(Error::Config(format!(
                "train_size {} is smaller than batch_size {}",
                self.data.train_size, self.train.batch_size
            )));
        }
        if self.data.test_size == 0 {
            return Err(Error::Config("test_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.data.labeled_fraction) {
            return Err(Error::Config("labeled_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("vanilla_skip = true\ncycle_augment = noise\nlr_g = 0.001\ndisable_dh = 1").unwrap();
        let again = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.model.skip, SkipMode::Vanilla);
        assert!(!cfg.model.highfreq_disc);
    }

    #[test]
    fn every_key_is_listed_once() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        assert_eq!(text.lines().count(), RunConfig::KEYS.len());
        let mut keys = RunConfig::KEYS.to_vec();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), RunConfig::KEYS.len());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("epochs = many").is_err());
        assert!(RunConfig::parse("just a line").is_err());
        assert!(RunConfig::parse("disable_wavelet_skip = true\nvanilla_skip = true").is_err());
        assert!(RunConfig::parse("# comment\n\nepochs = 3 # trailing").is_ok());
    }

    #[test]
    fn skip_flags_map_to_modes() {
        let cfg = RunConfig::parse("skip_band_mode = low").unwrap();
        assert_eq!(cfg.model.skip, SkipMode::LowFreq);
        let cfg = RunConfig::parse("disable_wavelet_skip = true").unwrap();
        assert_eq!(cfg.model.skip, SkipMode::Off);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }
}
