use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite value in point {0}")]
    NonFinite(usize),
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("{k} cells requested for {n} points")]
    TooManyCells { k: usize, n: usize },
    #[error("covariate range is degenerate")]
    DegenerateRange,
    #[error("empty neighbourhood")]
    EmptyNeighbourhood,
    #[error("degenerate local design")]
    DegenerateDesign,
    #[error("no information: prior precision and local weight are both zero")]
    NoInformation,
    #[error("pooled degrees of freedom are not positive")]
    NonpositiveDof,
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("iteration did not converge after {0} steps")]
    NoConvergence(usize),
    #[error("posterior mass {mass:.3e} sits at the edge of the quadrature grid")]
    GridTooSmall { mass: f64 },
    #[error("too few points: need {needed}, have {have}")]
    TooFewPoints { needed: usize, have: usize },
    #[error("{skipped} of {total} start-curve draws failed")]
    TooManySkippedDraws { skipped: usize, total: usize },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: &'static str) -> Self {
        Error::InvalidParameter { name, reason }
    }
}
