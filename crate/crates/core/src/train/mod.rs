//! Optimization and evaluation: Adam, the plateau schedule with early
//! stopping, the epoch loop and answer metrics.

mod fit;
mod metrics;
mod optim;
mod schedule;

pub use fit::{
    batch_images, batch_rules, batch_targets, check_compatible, evaluate, train, EpochRecord, TrainConfig, TrainReport,
    CHECKPOINT_DIR, METRICS_FILE, METRICS_HEADER,
};
pub use metrics::{argmax, softmax, Breakdown, MetricReport};
pub use optim::Adam;
pub use schedule::{Decision, Schedule};
