//! Masked cross-entropy training with Adam, evaluation and learning-rate
//! search.

mod adam;
mod loss;
mod metrics;
mod report;
mod training;

pub use adam::{adam_step, AdamState};
pub use loss::{masked_cross_entropy, CrossEntropy};
pub use metrics::MetricsReport;
pub use report::{
    append_metrics_row, read_loss_curve, write_loss_curve, MetricsRow, LOSS_CURVE_HEADER,
    METRICS_HEADER,
};
pub use training::{
    dataset_loss, evaluate, generalization_gap, lr_search, predict_sequences,
    sample_learning_rates, split_by_essay, train, train_with_validation, EpochRecord, LossCurve,
    LrSearchOutcome, TrainConfig, TrainOutcome, TrialOutcome, DEFAULT_LR_RANGE,
    DEFAULT_LR_TRIALS,
};
