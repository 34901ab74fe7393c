mod classifier;
mod config;
mod optim;
mod step;

pub use classifier::{classifier_accuracy, mean, train_classifier};
pub use config::{ClassifierTrainConfig, ModelConfig, RealSource, TrainConfig};
pub use optim::{ema_update, Adam, AdamConfig, LrSchedule, LrSet};
pub use step::{sample_target, ModelSet, StepMetrics, Trainer};
