use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Non-resonance violations carry the offending index
/// so callers can hand them to the measure-estimation machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("near-resonant frequency: |omega . l| = {value:.3e} at l = {l:?}")]
    NearResonant { value: f64, l: Vec<i32> },

    #[error("non-resonance violation at (l = {l:?}, j = {j}, jp = {jp}): margin {margin:.3e} < 1")]
    NonResonance { l: Vec<i32>, j: i32, jp: i32, margin: f64 },

    #[error("diffeomorphism condition violated: |omega| ||alpha||_C1 = {0:.3e} >= 1")]
    DiffeoCondition(f64),

    #[error("fixed-point iteration failed to contract within {0} iterations (residual {1:.3e})")]
    FixedPoint(usize, f64),

    #[error("operator exponential series did not converge within {0} terms")]
    ExpDivergence(usize),

    #[error("coefficient must be strictly positive; min over the grid is {0:.3e}")]
    NonPositive(f64),

    #[error("x-average condition violated: {0}")]
    MeanCondition(String),

    #[error("dense system dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("dense system is singular to machine precision (pivot {0:.3e})")]
    Singular(f64),

    #[error("iteration diverged at step {step}: residual {residual:.3e}")]
    Divergence { step: usize, residual: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error records a frequency exclusion (a Cantor-set datum)
    /// rather than a genuine failure.
    pub fn is_exclusion(&self) -> bool {
        matches!(self, Error::NearResonant { .. } | Error::NonResonance { .. })
    }
}
