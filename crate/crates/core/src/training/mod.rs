//! Fine-tuning: configuration, learning-rate schedule, training loop and
//! dev-set model selection.

mod config;
mod metrics;
mod schedule;
mod trainer;

pub use config::{OptimizerKind, Sampling, TrainConfig};
pub use metrics::{evaluate_dev, score_outcomes, CorefMetrics, DevOutcome};
pub use schedule::LinearWarmupDecay;
pub use trainer::{dataset_loss, tokenizer_for, train, train_model, EpochReport, StepLoss, TrainOutcome, TrainReport};
