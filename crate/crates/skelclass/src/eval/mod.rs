//! Confusion-matrix metrics, stratified cross-validation, bootstrap
//! confidence intervals, and significance testing against chance.

mod cv;
mod metrics;
mod stats;
#[cfg(test)]
mod tests;

pub use cv::{
    cross_validate, stratified_folds, summarize_folds, CvReport, FoldReport, MetricSummary,
    CHANCE_BASELINE, DEFAULT_N_BOOT,
};
pub use metrics::{confusion, metrics, ConfusionMatrix, Metrics, ZeroDivisionFlags, METRIC_NAMES};
pub use stats::{
    bootstrap_ci, ln_gamma, percentile, regularized_incomplete_beta, t_test_vs_chance,
    BootstrapCi, TTest,
};

use thiserror::Error;

use crate::pose::PoseError;
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Pose(#[from] PoseError),
}
