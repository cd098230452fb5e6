//! Optimisation, training loop and evaluation metrics.

pub mod adam;
pub mod cv;
pub mod loss;
pub mod metrics;
pub mod schedule;
pub mod trainer;

pub use adam::{Adam, AdamConfig};
pub use cv::{cross_validate, CvReport, FoldReport};
pub use metrics::{metrics, Metrics, MetricsReport, OutputMetrics};
pub use schedule::lr_schedule;
pub use trainer::{evaluate, predictions, train, EpochRecord, History, TrainConfig};
