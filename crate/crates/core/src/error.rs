use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("history encoding: {0}")]
    Encoding(String),

    #[error("enumeration exceeded node budget of {budget} (reached {reached})")]
    Budget { budget: usize, reached: usize },

    #[error("baseline denominator {denominator:e} below floor {floor:e}")]
    DivisionGuard { denominator: f64, floor: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
