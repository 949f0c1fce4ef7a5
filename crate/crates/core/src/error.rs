use thiserror::Error;

/// Errors raised by the simulation, estimation and key-rate routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error(
        "quadrature did not converge for {what}: estimate {estimate:e}, error {error:e} after {intervals} subintervals"
    )]
    Quadrature {
        what: &'static str,
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("unphysical state: {0}")]
    Unphysical(String),

    #[error("cluster [{lo:?}, {hi:?}] has no probability mass")]
    EmptyCluster { lo: Option<f64>, hi: Option<f64> },

    #[error("cluster holds {packages:.3} packages, at least 2 are required")]
    ClusterTooSmall { packages: f64 },

    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value,
            lo,
            hi,
        })
    }
}
