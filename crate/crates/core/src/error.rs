use std::fmt;

use thiserror::Error;

/// A single violated model invariant, addressed by its field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub path: String,
    pub message: String,
}

impl ValidationIssue {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationIssue {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid model: {}", join_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported spectrum: {0}")]
    UnsupportedSpectrum(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("singular evaluation: {0}")]
    Singularity(String),

    #[error("lattice resolution insufficient: {0}")]
    Resolution(String),

    #[error("near-pole configuration in term {term}: |k^2 - m^2| = {distance:e}")]
    NearPole { term: usize, distance: f64 },

    #[error("quadrature tolerance exceeded: {0}")]
    Tolerance(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// True for failures caused by numeric tolerances rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Resolution(_) | Error::Tolerance(_) | Error::NearPole { .. } | Error::Singularity(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
