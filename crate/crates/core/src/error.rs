use crate::dynsys::State;

/// Errors produced by the numerical pipelines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("step size underflow at t = {t} (last valid state {state:?})")]
    StepUnderflow { t: f64, state: State },

    #[error("orbit escaped beyond radius {radius} at t = {t}")]
    Escape { t: f64, radius: f64, state: State },

    #[error("wall-clock budget exhausted")]
    Timeout,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("sequence too short: need {needed} symbols, got {got}")]
    ShortSequence { needed: usize, got: usize },

    #[error("no sign change on bracket: {0}")]
    NoSignChange(String),

    #[error("degenerate frame: {0}")]
    Degenerate(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
