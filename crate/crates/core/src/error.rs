use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid chart: {0}")]
    InvalidChart(String),

    #[error("field does not match chart: expected {expected} samples, got {got}")]
    SampleCount { expected: usize, got: usize },

    #[error("fields live on different charts")]
    ChartMismatch,

    #[error("metric is singular or not positive-definite at node {node} {coords:?}")]
    SingularMetric { node: usize, coords: [usize; 3] },

    #[error("non-positive model coefficient {0}")]
    NonPositiveCoefficient(f64),

    #[error("flow reaches extinction at beta* = {beta_star} (requested beta = {beta})")]
    Extinction { beta: f64, beta_star: f64 },

    #[error("blow-up detected at beta = {beta}: sup|Rm| = {sup_rm}")]
    BlowUp { beta: f64, sup_rm: f64 },

    #[error("step size underflow at beta = {beta} (step {step})")]
    StepUnderflow { beta: f64, step: f64 },

    #[error("non-finite {field} at beta = {beta}")]
    NonFinite { beta: f64, field: &'static str },

    #[error("positivity lost at beta = {beta}: {detail}")]
    PositivityLoss { beta: f64, detail: String },

    #[error("measure normalization drifted by {drift:e} at beta = {beta}")]
    NormalizationDrift { beta: f64, drift: f64 },

    #[error("tau is non-positive ({tau}) at beta = {beta}")]
    NonPositiveTau { beta: f64, tau: f64 },

    #[error("trajectory does not cover beta = {beta} (covered [{lo}, {hi}])")]
    MissingCoverage { beta: f64, lo: f64, hi: f64 },

    #[error("mollifier scale eta0 = {eta0} is under-resolved (needs >= {min})")]
    UnderResolvedMollifier { eta0: f64, min: f64 },

    #[error("point lies beyond the half-period injectivity guard of the source")]
    BeyondInjectivityGuard,

    #[error("no kernel available at eta = {0}")]
    MissingKernel(f64),

    #[error("inadmissible initial data: {condition} fails at node {node} (margin {margin:e})")]
    Inadmissible {
        condition: &'static str,
        node: usize,
        margin: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed snapshot {path}: {reason}")]
    Snapshot { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
