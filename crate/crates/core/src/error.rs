use std::fmt;

use thiserror::Error;

/// What went wrong in a process specification, and where.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Spatial location of the breach, when there is one.
    pub location: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    IllOrderedBreakpoints,
    ProbabilitySum,
    ProbabilityRange,
    NegativeDelay,
    StickyOrder,
    Ellipticity,
    NonFinite,
    EmptyProbeGrid,
    Monotonicity,
    Continuity,
    InconsistentJumpSet,
    DegenerateDerivative,
    InvalidTube,
}

impl Violation {
    pub fn new(kind: ViolationKind, location: Option<f64>, message: impl Into<String>) -> Self {
        Violation { kind, location, message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some(x) => write!(f, "{:?} at x={}: {}", self.kind, x, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("specification error: {}", join_violations(.0))]
    Spec(Vec<Violation>),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("evaluation error at byte {offset} (x={x}): {message}")]
    Eval { offset: usize, x: f64, message: String },

    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: usize, message: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("quadrature did not converge: estimate {estimate}, error {error_estimate} after {intervals} intervals")]
    Quadrature { estimate: f64, error_estimate: f64, intervals: usize },

    #[error("simulation failed on {} path(s): first at path {first_index}: {first_message}", .indices.len())]
    Ensemble { indices: Vec<u64>, first_index: u64, first_message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn spec(kind: ViolationKind, location: Option<f64>, message: impl Into<String>) -> Self {
        Error::Spec(vec![Violation::new(kind, location, message)])
    }

    /// Violations carried by a specification error, empty otherwise.
    pub fn violations(&self) -> &[Violation] {
        match self {
            Error::Spec(v) => v,
            _ => &[],
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. } | Error::Quadrature { .. } | Error::Eval { .. } | Error::Ensemble { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
