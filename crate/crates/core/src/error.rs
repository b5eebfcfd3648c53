use thiserror::Error;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SstaError {
    /// A parameter is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The correlated-max formulas need |rho| < 1.
    #[error("degenerate correlation rho = {rho}: the correlated formula needs |rho| < 1")]
    DegenerateCorrelation { rho: f64 },

    /// Quadrature, iteration caps and other numerical breakdowns.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("linear program is infeasible (phase-one optimum {phase_one_optimum:e})")]
    Infeasible { phase_one_optimum: f64 },

    #[error("linear program is unbounded (entering column {column})")]
    Unbounded { column: usize },

    /// A correlation was requested on mixture arrivals without enabling the
    /// linearised correction.
    #[error("correlation rho = {rho} on mixture arrivals requires weak-correlation mode")]
    UnsupportedCorrelation { rho: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("dangling edge {from} -> {to}: node `{missing}` is not declared")]
    DanglingEdge {
        from: String,
        to: String,
        missing: String,
    },

    #[error("source `{0}` has no arrival distribution")]
    MissingArrival(String),

    /// Wraps a failure with the graph location where it happened.
    #[error("node `{node}` (level {level}): {source}")]
    AtNode {
        node: String,
        level: usize,
        #[source]
        source: Box<SstaError>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl SstaError {
    pub fn domain(msg: impl Into<String>) -> Self {
        SstaError::Domain(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        SstaError::Numerical(msg.into())
    }

    /// True for failures caused by the input document or parameters rather
    /// than by the numerics.
    pub fn is_input_error(&self) -> bool {
        match self {
            SstaError::Domain(_)
            | SstaError::DegenerateCorrelation { .. }
            | SstaError::UnsupportedCorrelation { .. }
            | SstaError::Parse { .. }
            | SstaError::InvalidGraph(_)
            | SstaError::Cycle(_)
            | SstaError::DanglingEdge { .. }
            | SstaError::MissingArrival(_)
            | SstaError::Io(_) => true,
            SstaError::Numerical(_) | SstaError::Infeasible { .. } | SstaError::Unbounded { .. } => false,
            SstaError::AtNode { source, .. } => source.is_input_error(),
        }
    }
}

impl From<std::io::Error> for SstaError {
    fn from(e: std::io::Error) -> Self {
        SstaError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SstaError>;
