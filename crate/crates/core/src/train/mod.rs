//! ADAM, the training schedule with checkpoint selection, and the
//! ACC/SEN/SPE/ROC/AUC evaluation suite.

mod adam;
mod config;
mod data;
mod metrics;
mod nonfinite;
mod report;
mod trainer;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use config::TrainConfig;
pub use data::{Dataset, Inputs};
pub use metrics::{confusion_metrics, roc_auc, Confusion, Roc, RocPoint, Score, THRESHOLD};
pub use report::{emit_report, read_reports, MetricsReport, METRICS_HEADER, ROC_HEADER};
pub use trainer::{
    checkpoint_inputs, checkpoint_name, cross_task_evaluate, evaluate, evaluate_dataset, predict, scores,
    select_best_checkpoint, train, train_model, train_step, CheckpointScore, EpochLog, TrainOutcome, LOG_HEADER,
};
