use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resource guard exceeded: {0}")]
    Resource(String),

    #[error("invalid group element: {0}")]
    InvalidElement(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("word is not admissible: {0}")]
    Inadmissible(String),

    #[error("point {x} lies outside the branch domain")]
    OutsideDomain { x: f64 },

    #[error("letter {label} is not contracting (sup |derivative| = {sup})")]
    NonContracting { label: String, sup: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(u32, u32),

    #[error("eigensolver did not converge after {iterations} steps (best estimate {estimate}, residual {residual})")]
    Convergence {
        iterations: usize,
        estimate: f64,
        residual: f64,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
