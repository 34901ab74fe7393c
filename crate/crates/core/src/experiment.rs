//! End-to-end run: dataset, classifier pre-training and gate, optional
//! pseudo-labelling, then GAN training.

use std::path::Path;

use crate::config::RunConfig;
use crate::data::{generate_dataset, pseudo_label, SynthSample};
use crate::diagnostics::GatedClassifier;
use crate::error::{Error, Result};
use crate::io::{restore_trainer, stored_accuracy, trainer_checkpoint, Checkpoint};
use crate::train::{classifier_accuracy, mean, train_classifier, ModelSet, StepMetrics, Trainer};

/// Resolved configuration stored beside every checkpoint.
pub const CONFIG_FILE: &str = "config.cfg";

/// Offset separating test sample seeds from training sample seeds.
const TEST_SEED_BIT: u64 = 1 << 40;

#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: Vec<SynthSample>,
    pub test: Vec<SynthSample>,
}

pub fn build_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let d = &cfg.data;
    Ok(Datasets {
        train: generate_dataset(&d.synth, d.train_size, d.seed)?,
        test: generate_dataset(&d.synth, d.test_size, d.seed ^ TEST_SEED_BIT)?,
    })
}

/// State ready for GAN training.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: RunConfig,
    pub trainer: Trainer,
    /// Training pool after pseudo-labelling.
    pub pool: Vec<SynthSample>,
    pub test: Vec<SynthSample>,
    /// Per-attribute held-out classifier accuracy.
    pub classifier_accuracy: Vec<f64>,
}

impl Experiment {
    /// Build data and networks, pre-train the classifier on the labelled
    /// part of the pool and enforce the accuracy gate.
    pub fn prepare(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let data = build_datasets(config)?;
        let mut models = ModelSet::new(config.model, config.train.seed)?;
        let n_labeled = (config.data.labeled_fraction * data.train.len() as f64).round() as usize;
        let (labeled, unlabeled) = data.train.split_at(n_labeled);
        if labeled.is_empty() {
            return Err(Error::Config("no labelled samples to pre-train the classifier".into()));
        }
        train_classifier(&mut models.classifier, labeled, &config.train.classifier, config.train.seed)?;
        let acc = classifier_accuracy(&models.classifier, &data.test)?;
        let gate = config.train.classifier.accuracy_gate;
        if mean(&acc) < gate && !config.data.pseudo.override_gate {
            return Err(Error::AccuracyGate { accuracy: mean(&acc), gate });
        }
        let mut pool = labeled.to_vec();
        if !unlabeled.is_empty() {
            pool.extend(pseudo_label(&models.classifier, mean(&acc), unlabeled, &config.data.pseudo)?);
        }
        Ok(Self {
            config: config.clone(),
            trainer: Trainer::new(models, config.train)?,
            pool,
            test: data.test,
            classifier_accuracy: acc,
        })
    }

    pub fn epochs_left(&self) -> usize {
        self.config.train.total_epochs().saturating_sub(self.trainer.epoch)
    }

    /// Train one epoch.
    pub fn epoch(&mut self, on_step: impl FnMut(&StepMetrics) -> Result<()>) -> Result<()> {
        self.trainer.run_epoch(&self.pool, on_step)
    }

    /// Train every remaining epoch; `on_epoch` runs after each.
    pub fn run(
        &mut self,
        mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
        mut on_epoch: impl FnMut(&Self) -> Result<()>,
    ) -> Result<()> {
        while self.epochs_left() > 0 {
            self.epoch(&mut on_step)?;
            on_epoch(self)?;
        }
        Ok(())
    }

    pub fn gated_classifier(&self) -> Result<GatedClassifier<'_>> {
        GatedClassifier::new(
            &self.trainer.models.classifier,
            mean(&self.classifier_accuracy),
            if self.config.data.pseudo.override_gate {
                0.0
            } else {
                self.config.train.classifier.accuracy_gate
            },
        )
    }

    /// Write the full training state plus the resolved config to `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        let ck = trainer_checkpoint(&self.trainer, &self.config.hash(), &self.classifier_accuracy);
        ck.save(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), self.config.to_text())?;
        Ok(())
    }

    /// Rebuild an experiment from a checkpoint directory. Datasets are
    /// regenerated from the stored config and pseudo-labels recomputed with
    /// the restored classifier, so training can resume bit-exactly.
    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
        let ck = Checkpoint::load(dir)?;
        let data = build_datasets(&config)?;
        let mut trainer = Trainer::new(ModelSet::new(config.model, config.train.seed)?, config.train)?;
        restore_trainer(&mut trainer, &ck, &config.hash())?;
        let classifier_accuracy = stored_accuracy(&ck)?;
        let n_labeled = (config.data.labeled_fraction * data.train.len() as f64).round() as usize;
        let (labeled, unlabeled) = data.train.split_at(n_labeled);
        let mut pool = labeled.to_vec();
        if !unlabeled.is_empty() {
            let mut pseudo = config.data.pseudo;
            pseudo.override_gate = true;
            pool.extend(pseudo_label(&trainer.models.classifier, mean(&classifier_accuracy), unlabeled, &pseudo)?);
        }
        Ok(Self {
            config,
            trainer,
            pool,
            test: data.test,
            classifier_accuracy,
        })
    }
}
