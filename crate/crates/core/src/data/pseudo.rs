use super::synth::{Provenance, SynthSample};
use crate::error::{Error, Result};
use crate::nn::Classifier;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoLabelConfig {
    /// Label is 1 iff `p > threshold`; ties go to 0.
    pub threshold: f64,
    /// Minimum held-out classifier accuracy required to label.
    pub accuracy_gate: f64,
    pub override_gate: bool,
    pub batch_size: usize,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            accuracy_gate: 0.95,
            override_gate: false,
            batch_size: 64,
        }
    }
}

/// `[p > threshold]` per attribute.
pub fn threshold_labels(probs: &[f32], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| f64::from(p) > threshold).collect()
}

/// Relabel `unlabeled` with the classifier's thresholded predictions.
///
/// `accuracy` is the classifier's measured held-out accuracy; labelling is
/// refused below the gate unless overridden.
pub fn pseudo_label(
    classifier: &Classifier<f32>,
    accuracy: f64,
    unlabeled: &[SynthSample],
    cfg: &PseudoLabelConfig,
) -> Result<Vec<SynthSample>> {
    if accuracy < cfg.accuracy_gate && !cfg.override_gate {
        return Err(Error::AccuracyGate {
            accuracy,
            gate: cfg.accuracy_gate,
        });
    }
    let k = classifier.config.num_attrs;
    let mut out = Vec::with_capacity(unlabeled.len());
    for chunk in unlabeled.chunks(cfg.batch_size.max(1)) {
        let images: Vec<Tensor<f32>> = chunk.iter().map(|s| s.image.clone()).collect();
        let probs = classifier.probabilities(&Tensor::stack(&images)?)?;
        for (s, p) in chunk.iter().zip(probs.data().chunks(k)) {
            out.push(SynthSample {
                image: s.image.clone(),
                labels: threshold_labels(p, cfg.threshold),
                provenance: Provenance::Pseudo,
                seed: s.seed,
            });
        }
    }
    Ok(out)
}
