//! Loss, metrics, the training loop, the historical-inertia baseline and
//! whole-model gradient checks.

mod baseline;
mod gradcheck;
mod metrics;
mod train;

pub use baseline::{hi_baseline, hi_baseline_split, HiMode};
pub use gradcheck::{
    gradcheck, gradcheck_model, toy_problem, GradcheckReport, ParamCheck, GRADCHECK_STEP,
    GRADCHECK_TOLERANCE,
};
pub use metrics::{
    evaluate, evaluate_split, is_observed, masked_mae_loss, metrics_of, HorizonMetrics, MetricSums,
    MetricsReport, ZERO_THRESHOLD,
};
pub use train::{
    read_epoch_log, write_epoch_log, EpochRecord, TrainOptions, Trainer, BEST_DIR, EPOCH_LOG,
    LAST_DIR,
};
