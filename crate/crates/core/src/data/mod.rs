//! Synthetic attribute images, augmentations and pseudo-labelling.

mod augment;
mod pseudo;
mod synth;

pub use augment::{apply_augment, AffineParams, AugmentDraw, AugmentKind, AugmentOp};
pub use pseudo::{pseudo_label, threshold_labels, PseudoLabelConfig};
pub use synth::{
    generate_dataset, generate_dataset_with_threads, render_sample, render_with_labels, sample_seed,
    worker_threads, Provenance, SynthConfig, SynthSample, ATTRIBUTE_NAMES,
};

use crate::error::Result;
use crate::tensor::Tensor;

/// Stack the images of the selected samples into one `N x 3 x S x S` batch.
pub fn stack_images(samples: &[SynthSample], indices: &[usize]) -> Result<Tensor<f32>> {
    let images: Vec<Tensor<f32>> = indices.iter().map(|&i| samples[i].image.clone()).collect();
    Tensor::stack(&images)
}
