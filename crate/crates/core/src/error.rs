use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("correlation {name} = {value} is outside [-1, 1]")]
    CorrelationOutOfRange { name: &'static str, value: f64 },

    #[error("covariance matrix is not positive semidefinite (smallest eigenvalue {eigenvalue:.6e})")]
    NotPositiveSemidefinite { eigenvalue: f64 },

    #[error("sample count must be at least 1")]
    EmptyDataset,

    #[error("invalid quantizer range [{t_min}, {t_max}]")]
    InvalidRange { t_min: f64, t_max: f64 },

    #[error("bits per symbol {0} outside [1, 16]")]
    BitsOutOfRange(u32),

    #[error("quantizer boundaries must be strictly increasing with 2^b + 1 entries")]
    InvalidBoundaries,

    #[error("quantizers disagree on symbol size ({0} vs {1} intervals)")]
    MismatchedSymbolSizes(usize, usize),

    #[error("correction bits must be in [1, 16], got {0}")]
    InvalidCorrectionBits(u32),

    #[error("guard width {guard} leaves no room for the data intervals (cell width {cell})")]
    GuardTooWide { guard: f64, cell: f64 },

    #[error("symbol {symbol} out of range for alphabet of size {size}")]
    SymbolOutOfRange { symbol: usize, size: usize },

    #[error("no symbol pairs to estimate from")]
    EmptyInput,

    #[error("no retained samples")]
    NoRetainedSamples,

    #[error("degenerate reconciliation cost: NEC agreement rate {0} leaves no redundancy")]
    DegenerateDenominator(f64),

    #[error("invalid threshold vector: {0}")]
    InvalidThresholds(String),

    #[error("invalid scheme: {0}")]
    InvalidScheme(String),

    #[error("experiment plan has no schemes")]
    NoSchemes,

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Validation errors map to exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Json(_))
    }
}
