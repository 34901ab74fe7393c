//! Network building blocks and the generator, discriminator and classifier.

mod classifier;
mod discriminator;
mod generator;
mod layers;
mod params;
mod spectral;

pub use classifier::{Classifier, ClassifierConfig, ClassifierOutput};
pub use discriminator::{DiscBound, DiscInputs, DiscKind, Discriminator, DiscriminatorSet};
pub use generator::{Generator, GeneratorConfig, SkipMode};
pub use layers::{AdaIn, Conv2d, Norm, ResBlock, Resample, IN_EPS, LRELU_SLOPE};
pub use params::{Bound, ParamId, ParamSet};
pub use spectral::{spectral_normalize, SpectralState};
