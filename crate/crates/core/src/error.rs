use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("impedance matrix is singular (|det Q| = {det:e})")]
    SingularQ { det: f64 },

    #[error("reference request infeasible: {0}")]
    Infeasible(String),

    #[error("power-flow solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate voltage estimate: |x̂| = {norm:e} below floor {floor:e}")]
    DegenerateEstimate { norm: f64, floor: f64 },

    #[error("persistent-excitation window not filled: have {have:.6} s of history, need {need:.6} s")]
    InsufficientHistory { have: f64, need: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("failed to parse scenario: {0}")]
    Parse(String),

    #[error("failed to serialize output: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
