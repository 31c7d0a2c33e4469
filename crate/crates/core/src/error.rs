//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} unsupported (expected 2 or 3)")]
    Dimension(usize),

    #[error("invalid order range [{lo}, {hi}] for |mu| = {order}")]
    OrderRange { lo: usize, hi: usize, order: usize },

    #[error("multi-index {beta} is not a sub-index of {mu}")]
    NotSubIndex { beta: String, mu: String },

    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("derivative order {order} exceeds the grid limit {limit}")]
    DerivativeOrder { order: usize, limit: usize },

    #[error("grid configuration error: {0}")]
    GridConfig(String),

    #[error("coefficient data integrity: {0}")]
    CoefficientData(String),

    #[error("solution blew up at t = {t}: {detail}")]
    BlowUp { t: f64, detail: String },

    #[error("Gevrey fit degenerate: {0}")]
    FitDegenerate(String),

    #[error("diagnostics data error: {0}")]
    DiagnosticsData(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown scenario `{0}`")]
    Scenario(String),

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
