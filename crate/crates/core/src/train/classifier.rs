use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ClassifierTrainConfig;
use super::optim::{Adam, AdamConfig};
use crate::data::{stack_images, SynthSample};
use crate::error::{Error, Result};
use crate::loss::attr_classification_loss;
use crate::nn::Classifier;
use crate::tensor::{Graph, Tensor};

pub(crate) fn label_tensor(labels: &[&[bool]], k: usize) -> Result<Tensor<f32>> {
    let data = labels
        .iter()
        .flat_map(|l| l.iter().map(|&b| if b { 1.0 } else { 0.0 }))
        .collect::<Vec<f32>>();
    Tensor::new(&[labels.len(), k], data)
}

/// Supervised pre-training of the attribute classifier with per-attribute
/// binary cross-entropy. Returns the mean loss of each epoch.
pub fn train_classifier(
    classifier: &mut Classifier<f32>,
    data: &[SynthSample],
    cfg: &ClassifierTrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty { op: "train_classifier" });
    }
    let k = classifier.config.num_attrs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        &classifier.params,
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    let bs = cfg.batch_size.max(1);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(bs) {
            let x = stack_images(data, idx)?;
            let labels: Vec<&[bool]> = idx.iter().map(|&i| data[i].labels.as_slice()).collect();
            let y = label_tensor(&labels, k)?;
            let mut g = Graph::new();
            let b = classifier.params.bind(&mut g, true);
            let xv = g.constant(x);
            let yv = g.constant(y);
            let mask = g.constant(Tensor::full(&[idx.len(), k], 1.0));
            let out = classifier.forward(&mut g, &b, xv)?;
            let loss = attr_classification_loss(&mut g, out.logits, yv, mask)?;
            let loss = g.scale(loss, 1.0 / k as f64)?;
            total += f64::from(g.value(loss).item());
            batches += 1;
            let mut grads = g.backward(loss)?;
            let grads = classifier.params.collect_grads(&b, &mut grads);
            opt.update(&mut classifier.params, &grads)?;
        }
        history.push(total / batches as f64);
    }
    Ok(history)
}

/// Per-attribute accuracy of `[p > 0.5]` against the stored labels.
pub fn classifier_accuracy(classifier: &Classifier<f32>, data: &[SynthSample]) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty { op: "classifier_accuracy" });
    }
    let k = classifier.config.num_attrs;
    let mut correct = vec![0usize; k];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(64) {
        let p = classifier.probabilities(&stack_images(data, chunk)?)?;
        for (&i, row) in chunk.iter().zip(p.data().chunks(k)) {
            for (a, (&pi, &l)) in row.iter().zip(&data[i].labels).enumerate() {
                if (pi > 0.5) == l {
                    correct[a] += 1;
                }
            }
        }
    }
    Ok(correct.iter().map(|&c| c as f64 / data.len() as f64).collect())
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
