use std::path::PathBuf;

use thiserror::Error;

use crate::lp::DegeneracyReport;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the derivation / training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed LP: {0}")]
    MalformedLp(String),
    #[error("LP is infeasible")]
    InfeasibleLp,
    #[error("LP is unbounded")]
    UnboundedLp,
    #[error("simplex did not terminate within {0} pivots")]
    IterationLimit(usize),

    #[error("degenerate LP at theta = {theta:?} ({report}); retry with perturbation enabled (uniform +/-{suggested_magnitude:e})")]
    DegenerateAtPoint {
        theta: Vec<f64>,
        report: DegeneracyReport,
        suggested_magnitude: f64,
    },
    #[error("LP infeasible at theta = {0:?}")]
    InfeasibleAtPoint(Vec<f64>),
    #[error("active constraint system is singular at theta = {0:?}")]
    SingularActiveSystem(Vec<f64>),
    #[error("exploration stalled; uncovered witness theta = {witness:?}: {reason}")]
    ExplorationStalled { witness: Vec<f64>, reason: String },
    #[error("point {0:?} is not covered by any region")]
    PointNotCovered(Vec<f64>),
    #[error("invalid parametric LP: {0}")]
    InvalidParametric(String),

    #[error("parameter {name} = {value} outside [{lo}, {hi}]")]
    ParameterOutOfDomain {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid dispatch spec: {0}")]
    InvalidSpec(String),
    #[error("loss digest {loss} does not match spec digest {spec}")]
    SpecMismatch { loss: String, spec: String },
    #[error("capacity mismatch: checkpoint {checkpoint} kW vs spec {spec} kW")]
    CapacityMismatch { checkpoint: f64, spec: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown training mode `{0}`")]
    UnknownMode(String),

    #[error("malformed CSV {path}: {reason}")]
    MalformedCsv { path: PathBuf, reason: String },
    #[error("schema violation in {path}: {}", .violations.join("; "))]
    SchemaViolation {
        path: PathBuf,
        violations: Vec<String>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedLp(_) => "MalformedLp",
            Error::InfeasibleLp => "InfeasibleLP",
            Error::UnboundedLp => "UnboundedLP",
            Error::IterationLimit(_) => "IterationLimit",
            Error::DegenerateAtPoint { .. } => "DegenerateAtPoint",
            Error::InfeasibleAtPoint(_) => "InfeasibleAtPoint",
            Error::SingularActiveSystem(_) => "SingularActiveSystem",
            Error::ExplorationStalled { .. } => "ExplorationStalled",
            Error::PointNotCovered(_) => "PointNotCovered",
            Error::InvalidParametric(_) => "InvalidParametric",
            Error::ParameterOutOfDomain { .. } => "ParameterOutOfDomain",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::SpecMismatch { .. } => "SpecMismatch",
            Error::CapacityMismatch { .. } => "CapacityMismatch",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::UnknownMode(_) => "UnknownMode",
            Error::MalformedCsv { .. } => "MalformedCsv",
            Error::SchemaViolation { .. } => "SchemaViolation",
            Error::Io { .. } => "Io",
            Error::Json(_) => "Json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
