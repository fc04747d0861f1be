//! Training loop, evaluation and metrics.

mod metrics;
mod trainer;

pub use metrics::{class_weights, classification_accuracy, percentile_bins, percentile_report, roc_auc, BinReport};
pub use trainer::{
    evaluate, load_task, prepare, DataSource, EvalReport, MetricsRecord, Prepared, Target, TaskData,
    TrainConfig, TrainOutcome, Trainer, SPLIT_FRACTIONS, write_metrics,
};
