use thiserror::Error;

/// Every failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape entry {value} on axis {axis} is not a power of two")]
    NotPowerOfTwo { axis: usize, value: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite sample at flat index {index}")]
    NonFinite { index: usize },

    #[error("resolution exhausted: level {requested} requested, max admissible level is {max_admissible}")]
    ResolutionExhausted { requested: usize, max_admissible: usize },

    #[error("profile rejected at |xi| = {frequency}: {reason}")]
    ProfileRejected { frequency: f64, reason: String },

    #[error("moment system infeasible at order {requested}; achieved order {achieved}")]
    MomentSystem { requested: usize, achieved: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mask has empty interior")]
    EmptyMask,

    #[error("nonzero mean {mean:.3e} on the torus; strip the harmonic part first")]
    NonzeroMean { mean: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I + K is near-singular: min singular value {min_singular:.3e}")]
    NearSingular { min_singular: f64 },

    #[error("interpolation point {point:?} leaves the box")]
    OutOfBox { point: Vec<f64> },

    #[error("degenerate gradient at boundary sample {sample:?}")]
    DegenerateGradient { sample: Vec<f64> },

    #[error("budget violated at step {step}: {quantity} = {value:.6e} exceeds {bound:.6e}")]
    Budget { step: usize, quantity: String, value: f64, bound: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
