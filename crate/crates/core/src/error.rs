use std::fmt;

use thiserror::Error;

/// Structural assumptions on the portfolio constraints, named by their
/// conventional labels so messages can be matched against the model
/// documentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Assumption {
    /// Exogenous portfolios keep a non-negative next-period value.
    A1,
    /// A portfolio with strictly positive next-period value exists.
    A2,
    /// The projection of `A` onto the complement of null investments lies in `A`.
    A3,
    /// The projected set is compact.
    A4,
    /// No unbounded arbitrage.
    A5,
    /// Cone property of the exogenous constraint set.
    ConeA,
    /// Cone property of the endogenous constraint set.
    ConeB,
}

impl Assumption {
    pub const ALL: [Assumption; 7] = [
        Assumption::A1,
        Assumption::A2,
        Assumption::A3,
        Assumption::A4,
        Assumption::A5,
        Assumption::ConeA,
        Assumption::ConeB,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Assumption::A1 => "(A.1)",
            Assumption::A2 => "(A.2)",
            Assumption::A3 => "(A.3)",
            Assumption::A4 => "(A.4)",
            Assumption::A5 => "(A.5)",
            Assumption::ConeA => "(A-cone)",
            Assumption::ConeB => "(B-cone)",
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("assumption {assumption} violated: {detail}")]
    Assumption { assumption: Assumption, detail: String },

    #[error("numerical error{}: {message}", state.map(|s| format!(" at state {s}")).unwrap_or_default())]
    Numerical { message: String, state: Option<usize> },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { what: &'static str, iterations: usize, residual: f64 },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn assumption(assumption: Assumption, detail: impl Into<String>) -> Self {
        Error::Assumption { assumption, detail: detail.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical { message: message.into(), state: None }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Process exit status for this error: 2 for assumption violations,
    /// 3 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Assumption { .. } => 2,
            Error::Numerical { .. }
            | Error::NonConvergence { .. }
            | Error::Consistency(_)
            | Error::Invariant(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
