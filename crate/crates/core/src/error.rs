use thiserror::Error;

/// Failure modes shared by every stage of the homogenization pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} must be positive and finite, got {value}")]
    NonPositiveInput { what: &'static str, value: f64 },

    #[error("unit cell has no layers")]
    EmptyCell,

    #[error("expected {expected} per-layer subregion counts, got {got}")]
    CountMismatch { expected: usize, got: usize },

    #[error("invalid tolerance {name} = {value}")]
    InvalidTolerance { name: &'static str, value: f64 },

    #[error("reference layer index {index} out of range for a cell of {layers} layers")]
    LayerIndex { index: usize, layers: usize },

    #[error("(omega = {omega}, q = {q}) lies within the pole tolerance of a reference-medium resonance (xi = {xi})")]
    NearPole { omega: f64, q: f64, xi: f64 },

    #[error("eigenfield system singular at (omega = {omega}, q = {q}), condition estimate {condition:.3e}")]
    SingularSystem { omega: f64, q: f64, condition: f64 },

    #[error("found {found} of {requested} requested roots at q = {q}")]
    InsufficientRoots {
        q: f64,
        found: usize,
        requested: usize,
    },

    #[error("denominator 1 + v_p S = {value:.3e} is degenerate")]
    DegenerateDenominator { value: f64 },

    #[error(
        "(q = {q}, omega = {omega}) is not on an exact branch (trace residual {residual:.3e})"
    )]
    NotOnBranch { q: f64, omega: f64, residual: f64 },

    #[error("mode average <{which}> vanishes relative to the field norm")]
    ZeroAverage { which: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
