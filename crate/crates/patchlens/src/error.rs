use thiserror::Error;

/// Error type shared by every module in the crate.
///
/// The variants map one-to-one onto the process exit codes used by the CLI:
/// `Config` → 1, `Dimension`/`Data`/`Io` → 2, `Numeric` → 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameters (bad key, out-of-range value, ...).
    #[error("config error: {0}")]
    Config(String),
    /// Mismatched or out-of-bounds raster/window/grid dimensions.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Malformed or inconsistent input data (files, datasets).
    #[error("data error: {0}")]
    Data(String),
    /// Numerical failure (singular inversion, divergence, lost symmetry).
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
