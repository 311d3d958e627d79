//! Match criteria, label assignment, losses and the training loop.

mod assign;
mod loss;
mod matching;
mod trainer;

use thiserror::Error;

use crate::numerics::NumericsError;

pub use assign::{assign_labels, average_displacement, final_displacement, IgnoreVariant, Label, LabelAssignment, Strategy};
pub use loss::{confidence_loss, regression_loss};
pub use matching::{
    lateral_threshold, linear_threshold, longitudinal_threshold, scale_factor, MatchCriterion, MatchFamily, Thresholds,
    BENCHMARK_STEP_SECONDS,
};
pub use trainer::{
    eval_records, focal_criterion, focal_target, global_criterion, sample_loss, EpochLog, LayerLoss, SampleLoss,
    TrainConfig, Trainer, LOG_COLUMNS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainingError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("training diverged at batch {batch} (epoch {epoch}): {reason}")]
    Divergence { epoch: usize, batch: usize, reason: String },
}
