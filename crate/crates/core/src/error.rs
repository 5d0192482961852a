use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field is not band-limited to the half spectrum (outer energy fraction {excess:.3e})")]
    BandLimit { excess: f64 },

    #[error("orbital set is not orthonormal (max Gram deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("Gram matrix is numerically rank deficient (min eigenvalue {min_eigenvalue:.3e})")]
    NearRankDeficient { min_eigenvalue: f64 },

    #[error("degenerate field: massless kinetic trace {kinetic:.3e} is zero")]
    DegenerateField { kinetic: f64 },

    #[error("objective {value:.6e} fell below the collapse guard {guard:.6e}; coupling is likely above threshold")]
    DivergingObjective { value: f64, guard: f64 },

    #[error("self-consistent iteration oscillates even with mixing {mixing:.3e}; try a smaller mixing")]
    OscillationDetected { mixing: f64 },

    #[error("need at least {needed} records in the fit window, got {got}")]
    InsufficientRecords { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
