use thiserror::Error;

/// Errors raised by the laboratory.
///
/// Interlacing violations, crossings and infinite rates are data, not errors;
/// they are reported through the corresponding result types.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid index (n={level}, k={pos}) for a triangle with N={n}")]
    InvalidIndex { level: usize, pos: usize, n: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFiniteInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "simulation produced a non-finite value at step {step} for particle (n={level}, k={pos})"
    )]
    NonFinite {
        step: usize,
        level: usize,
        pos: usize,
    },

    #[error("bound is vacuous: L^2 - C1*T - C0^2 = {denominator} <= 0")]
    Domain { denominator: f64 },

    #[error("no driver reproduces the target path: {0}")]
    Infeasible(String),

    #[error("empty sample: at least one replicate is required")]
    EmptySample,

    #[error("degenerate slope fit: {usable} usable gamma value(s), at least 2 required")]
    DegenerateFit { usable: usize },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed csv: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
