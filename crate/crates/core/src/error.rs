use thiserror::Error;

/// Which side of the partial-hyperbolicity window a certificate violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolatedSide {
    /// Fiber contraction is at least as strong as the base contraction.
    Stable,
    /// Fiber expansion is at least as strong as the base expansion.
    Unstable,
    /// Some fiber map fails to be an orientation-preserving diffeomorphism.
    Orientation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not unimodular: det = {det}")]
    NotUnimodular { det: i64 },

    #[error("matrix is not hyperbolic: an eigenvalue lies on the unit circle")]
    NotHyperbolic,

    #[error("circle map is not a diffeomorphism: min derivative bound {min_bound:.6} <= 0")]
    NotDiffeomorphism { min_bound: f64 },

    #[error("fiber map is not Morse-Smale: near-neutral orbit at y = {y:.9} with multiplier {multiplier:.9}")]
    NotMorseSmale { y: f64, multiplier: f64 },

    #[error("fiber map has no periodic orbits up to period {max_period}")]
    NoPeriodicOrbits { max_period: usize },

    #[error("base point ({x1:.9}, {x2:.9}) is not periodic with period {period}")]
    NotPeriodic { x1: f64, x2: f64, period: usize },

    #[error("partial-hyperbolicity certificate failed on the {side:?} side (margin {margin:.6})")]
    CertificateFailed { side: ViolatedSide, margin: f64 },

    #[error("no homoclinic points found within shift cap {shift_cap}")]
    NoneFound { shift_cap: i64 },

    #[error("no convergence: {what} (residual {residual:.3e} after depth {depth})")]
    NoConvergence {
        what: &'static str,
        residual: f64,
        depth: usize,
    },

    #[error("arclength budget {budget} exhausted before the closure stalled")]
    BudgetExhausted { budget: f64 },

    #[error("point is not on the stable leaf of the base point")]
    NotOnStableLeaf,

    #[error("continuation of the attractor lost at b = {b}")]
    ContinuationLost { b: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid value for `{field}`: {value} (expected {range})")]
    Validation {
        field: String,
        value: String,
        range: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
