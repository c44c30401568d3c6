use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported wavelet order {0} (expected 1..=10)")]
    UnsupportedOrder(usize),
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("bad wavelet index: {0}")]
    BadIndex(String),
    #[error("bad kernel spec: {0}")]
    BadSpec(String),
    #[error("singular covariance at y = {0:?}")]
    SingularCovariance(Vec<f64>),
    #[error("operator too large: {0}")]
    TooLarge(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("bad sigma scheme: {0}")]
    BadScheme(String),
    #[error("bad window layout: {0}")]
    BadLayout(String),
    #[error("neighborhood budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
