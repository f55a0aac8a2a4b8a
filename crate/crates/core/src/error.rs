use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unknown {kind} code `{code}`")]
    UnknownCode { kind: &'static str, code: String },

    #[error("duplicate report id `{0}`")]
    DuplicateReportId(String),

    #[error("unknown report id `{0}`")]
    UnknownReport(String),

    #[error("invalid interval: {0}")]
    InvalidInterval(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("corpus needs at least {needed} reports, found {found}")]
    CorpusTooSmall { needed: usize, found: usize },

    #[error("value `{value}` not present in {field} frequency table")]
    UnknownValue { field: String, value: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no positive training pairs")]
    NoPositives,

    #[error("training pair ({0}, {1}) does not pass blocking")]
    PairFailsBlocking(String, String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("pair ({0}, {1}) is not part of the run")]
    UnknownPair(String, String),

    #[error("missing inputs: {}", .0.join(", "))]
    MissingInputs(Vec<String>),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad input data rather than misuse.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidConfig(_))
    }
}
