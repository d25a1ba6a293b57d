use thiserror::Error;

/// Failures raised by the simulation and analytic layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("process is not supercritical (R0 = {r0})")]
    Subcritical { r0: f64 },

    #[error("no data: {0}")]
    NoData(String),

    #[error("did not converge after {iterations} iterations: {what}")]
    NonConvergence { what: String, iterations: usize },

    #[error("population cap of {cap} particles reached before the horizon")]
    Capped { cap: usize },

    #[error("t = {t} lies beyond the explored horizon {horizon}")]
    OutOfHorizon { t: f64, horizon: f64 },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
