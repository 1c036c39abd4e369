use thiserror::Error;

/// Every failure mode of the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("region is empty")]
    EmptyRegion,
    #[error("start point {0:?} lies outside the domain")]
    StartOutsideDomain([i64; 3]),
    #[error("paths cannot be composed: first ends at {end:?}, second starts at {start:?}")]
    CompositionMismatch { end: [i64; 3], start: [i64; 3] },
    #[error("path never reaches the boundary of the ball")]
    NeverReachesBoundary,
    #[error("path has no visit to the inner boundary before the stopping index")]
    NoLastVisit,
    #[error("point {0:?} is not an interior point of the domain")]
    OutsideDomain([i64; 3]),
    #[error("invalid path prefix: {0}")]
    InvalidPrefix(String),
    #[error("conditioning event has probability zero")]
    ImpossibleConditioning,
    #[error("domain with {sites} sites exceeds the limit of {limit} for exact computation")]
    DomainTooLarge { sites: usize, limit: usize },
    #[error("rejection sampler exceeded {0} attempts")]
    AttemptCapExceeded(u64),
    #[error("at least one trial is required")]
    InsufficientTrials,
    #[error("invalid scales: {0}")]
    BadScales(String),
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("box pair is degenerate (x = y)")]
    DegeneratePair,
    #[error("box {0:?} does not qualify for the annulus")]
    OutsideAnnulus([i64; 3]),
    #[error("normalizing escape probability is zero or of the wrong kind")]
    DegenerateNormalizer,
    #[error("energy kernel exponent {0} is not below the dimension 3")]
    DivergentKernel(f64),
    #[error("not a lattice path: {0}")]
    NotAPath(String),
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
