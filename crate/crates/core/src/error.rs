//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by
//! failure class so callers (in particular the CLI) can map them onto
//! stable exit codes: shape/contract violations, degenerate or singular
//! inputs, iteration failures, and configuration/I-O problems.

use std::fmt;
use std::path::PathBuf;

/// Error type for all loft-kit operations.
#[derive(Debug)]
pub enum Error {
    /// Operand dimensions do not match the operation's contract.
    DimensionMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// Matrix must be square for this operation.
    NotSquare { rows: usize, cols: usize },
    /// Data length does not match the requested dimensions.
    InvalidData { expected: usize, got: usize },
    /// A non-finite entry (NaN or infinity) was found at construction.
    NonFinite { row: usize, col: usize },
    /// Input violates a symmetry/orthonormality contract.
    Contract { op: &'static str, detail: String },
    /// Rank-deficient or otherwise degenerate input.
    DegenerateInput { op: &'static str, detail: String },
    /// Linear system is singular (pivot below threshold).
    Singular { pivot: f64, threshold: f64 },
    /// Iterative kernel failed to converge within its sweep cap.
    NoConvergence { op: &'static str, sweeps: usize },
    /// A gradient-informed method was requested without a gradient.
    MissingGradient { method: &'static str },
    /// Invalid configuration. Collects every offending key when possible.
    Config { issues: Vec<String> },
    /// File-system failure.
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed file content, with 1-based line number when applicable.
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

impl Error {
    /// Shorthand for a single-issue configuration error.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config {
            issues: vec![msg.into()],
        }
    }

    /// True for failures of numerical origin (as opposed to bad config or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NoConvergence { .. }
                | Error::DegenerateInput { .. }
                | Error::NonFinite { .. }
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { op, lhs, rhs } => write!(
                f,
                "{op}: dimension mismatch, lhs is {}x{}, rhs is {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            Error::NotSquare { rows, cols } => {
                write!(f, "matrix must be square, got {rows}x{cols}")
            }
            Error::InvalidData { expected, got } => {
                write!(f, "data length mismatch: expected {expected}, got {got}")
            }
            Error::NonFinite { row, col } => {
                write!(f, "non-finite entry at ({row}, {col})")
            }
            Error::Contract { op, detail } => write!(f, "{op}: contract violation: {detail}"),
            Error::DegenerateInput { op, detail } => {
                write!(f, "{op}: degenerate input: {detail}")
            }
            Error::Singular { pivot, threshold } => write!(
                f,
                "singular system: pivot magnitude {pivot:.3e} below threshold {threshold:.3e}"
            ),
            Error::NoConvergence { op, sweeps } => {
                write!(f, "{op}: no convergence after {sweeps} sweeps")
            }
            Error::MissingGradient { method } => {
                write!(f, "support method '{method}' requires a gradient matrix")
            }
            Error::Config { issues } => {
                write!(f, "invalid configuration: {}", issues.join("; "))
            }
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Parse { path, line, detail } => {
                if *line > 0 {
                    write!(f, "{}:{line}: {detail}", path.display())
                } else {
                    write!(f, "{}: {detail}", path.display())
                }
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
