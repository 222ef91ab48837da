use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants are grouped by the exit-code class the CLI maps them to:
/// configuration problems, data problems, and numeric aborts.
#[derive(Debug, Error)]
pub enum RamError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite loss at fact #{fact_index} ({fact}); parameter norms: {norms}")]
    NonFinite {
        fact_index: usize,
        fact: String,
        norms: String,
    },

    #[error("enumeration cap exceeded: {needed} candidate tuples > cap {cap}; use a smaller instance")]
    EnumerationCap { needed: u128, cap: u128 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RamError {
    /// True for errors caused by bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            RamError::Config(_) | RamError::Mode(_) | RamError::EnumerationCap { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, RamError>;
