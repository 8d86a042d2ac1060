//! Prediction metrics and the black-box baseline.

mod blackbox;
mod metrics;

pub use blackbox::{blackbox_loss, blackbox_loss_and_grad, train_blackbox, BlackBoxModel, BLACKBOX_HIDDEN};
pub use metrics::{
    evaluate_model, sha256_hex, tracking_metrics, MeanStd, Metrics, MetricsReport, Physical, Predictor, RolloutMetrics,
    TrackingMetrics, METRICS_SCHEMA_VERSION,
};
