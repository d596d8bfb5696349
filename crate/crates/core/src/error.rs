use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time step {dt:e} s too large for spectral radius {radius:e} rad/s; use dt <= {suggested:e} s")]
    StepSize { dt: f64, radius: f64, suggested: f64 },

    #[error("jump probability per step {prob:.3} exceeds {limit}; reduce dt")]
    JumpProbability { prob: f64, limit: f64 },

    #[error("no unstable fixed point: Lambda = {lambda:.4} <= 1 or detuning nonzero")]
    NoUnstablePoint { lambda: f64 },

    #[error("no separatrix: Lambda = {lambda:.4} <= 1 or detuning nonzero")]
    NoSeparatrix { lambda: f64 },

    #[error("classical equations singular at the pole (z = {z})")]
    Pole { z: f64 },

    #[error("impossible jump: channel (p = {p}, q = {q}) has zero amplitude on this state")]
    ImpossibleJump { p: usize, q: usize },

    #[error("degenerate polarization: p = {0}")]
    DegeneratePolarization(f64),

    #[error("mean spin length is zero; spin squeezing undefined")]
    UndefinedSpinLength,

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
