use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("rank deficient: requested {requested} endmembers, data supports {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("unknown denoiser `{0}`")]
    UnknownDenoiser(String),

    #[error("denoiser `{0}` is already registered")]
    DuplicateDenoiser(String),

    #[error("denoiser failed on row {row}: {message}")]
    DenoiserFailed { row: usize, message: String },

    #[error("bad magic: expected XCUBE001, found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("malformed pgm: {0}")]
    Pgm(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Invalid(_) => "invalid",
            Error::NonFinite(_) => "non-finite",
            Error::RankDeficient { .. } => "rank",
            Error::UnknownDenoiser(_) | Error::DuplicateDenoiser(_) => "denoiser",
            Error::DenoiserFailed { .. } => "denoiser",
            Error::BadMagic { .. } => "format",
            Error::Truncated { .. } => "truncated",
            Error::HeaderMismatch(_) => "header",
            Error::Csv(_) => "csv",
            Error::Pgm(_) => "pgm",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}
