use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Halanay data with `a + b >= 0`: the delay-free part cannot absorb the delayed gain.
    #[error("no contraction: a + b = {sum} must be negative")]
    NoContraction { sum: f64 },

    #[error("delayed lookup at t = {time} precedes the history segment starting at {start}")]
    HistoryUnderflow { time: f64, start: f64 },

    #[error("delay {tau} at t = {time} is positive but shorter than the step {dt}")]
    DelayShorterThanStep { time: f64, tau: f64, dt: f64 },

    #[error("state diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("did not converge (last residual {residual:e})")]
    NonConvergence { residual: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn ensure_finite(values: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}
