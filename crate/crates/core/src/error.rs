//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,

    #[error("channel length mismatch: channel {channel} has {got} samples, expected {expected}")]
    ChannelLengthMismatch {
        channel: usize,
        got: usize,
        expected: usize,
    },

    #[error("channel index {index} out of range ({channels} channels)")]
    ChannelOutOfRange { index: usize, channels: usize },

    #[error("invalid frame parameters: {0}")]
    InvalidFrameParams(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid band table: {0}")]
    InvalidBandTable(String),

    #[error("singular covariance matrix at bin {bin} (increase diagonal loading)")]
    SingularCovariance { bin: usize },

    #[error("zero steering vector at bin {bin}")]
    ZeroSteering { bin: usize },

    #[error("invalid allocation problem: {0}")]
    InvalidProblem(String),

    #[error("infeasible allocation problem: no band carries speech energy")]
    InfeasibleProblem,

    #[error("grid resolution {step} too coarse for budget {budget} (must be <= budget/10)")]
    GridTooCoarse { step: f64, budget: f64 },

    #[error("grid enumeration would visit {points} points; refine is capped at {cap}")]
    GridTooLarge { points: u128, cap: u128 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown noise kind: {0}")]
    UnknownNoiseKind(String),

    #[error("wav: {0}")]
    Wav(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
