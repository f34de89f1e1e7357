use thiserror::Error;

/// Errors raised by the simulation primitives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("codebook index {index} out of range 1..={count}")]
    CodebookIndex { index: usize, count: usize },

    #[error("pilot slot {0} listed more than once")]
    OverlappingPilots(usize),

    #[error("pilot slot {slot} lies outside a window of {slots} slots")]
    PilotOutsideWindow { slot: usize, slots: usize },

    #[error(
        "time sharing is infeasible: sensing window {window_s:.6e} s must exceed (B/log2 Q + N)/W = {bound_s:.6e} s"
    )]
    TimeSharingInfeasible { window_s: f64, bound_s: f64 },

    #[error("traffic is not bursty: B*lambda_u = {load:.6e} bit/s must be below W*log2 Q = {capacity:.6e} bit/s")]
    NotBursty { load: f64, capacity: f64 },

    #[error("idle slots carry no transmission")]
    IdleSlot,

    #[error("no observations to integrate")]
    NoObservations,

    #[error("observation has {got} antennas, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("target gain undefined at this angle: every transmit vector is orthogonal to the steering vector")]
    UndefinedGain,

    #[error("CFAR needs {needed} training cells but only {available} are usable for cell {cell}")]
    CfarGridTooShort { cell: usize, needed: usize, available: usize },

    #[error("invalid parameter: {0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
