//! Pre-train the classifier on a labelled subset and pseudo-label the rest.

use wavegan::data::{generate_dataset, pseudo_label, PseudoLabelConfig, SynthConfig};
use wavegan::train::{classifier_accuracy, mean, train_classifier, ClassifierTrainConfig, ModelConfig, ModelSet};

fn main() -> wavegan::Result<()> {
    let data = generate_dataset(&SynthConfig::default(), 320, 5)?;
    let test = generate_dataset(&SynthConfig::default(), 64, 6)?;
    let (labeled, unlabeled) = data.split_at(256);
    let mut models = ModelSet::new(ModelConfig::default(), 0)?;
    let cfg = ClassifierTrainConfig {
        epochs: 24,
        ..ClassifierTrainConfig::default()
    };
    train_classifier(&mut models.classifier, labeled, &cfg, 0)?;
    let acc = classifier_accuracy(&models.classifier, &test)?;
    println!("held-out accuracy {acc:?}");

    let pseudo = pseudo_label(&models.classifier, mean(&acc), unlabeled, &PseudoLabelConfig::default())?;
    let agree = pseudo
        .iter()
        .zip(unlabeled)
        .flat_map(|(p, t)| p.labels.iter().zip(&t.labels).map(|(a, b)| a == b))
        .filter(|&same| same)
        .count();
    let total: usize = pseudo.iter().map(|s| s.labels.len()).sum();
    println!("pseudo labels agree with ground truth on {agree}/{total} entries");
    Ok(())
}

