use funfx_core::Error as CoreError;
use serde::Serialize;

/// Failures surfaced by the command-line front end, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {message}")]
    Data { message: String, row: Option<usize> },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn data(message: impl Into<String>, row: Option<usize>) -> Self {
        Self::Data {
            message: message.into(),
            row,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// 2 for configuration, 3 for data and I/O, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data { .. } | Self::Io { .. } => 3,
            Self::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Data { .. } => "data",
            Self::Numerical(_) => "numerical",
            Self::Io { .. } => "io",
        }
    }

    /// The machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            schema: &'a str,
            error: &'a str,
            exit_code: i32,
            message: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            row: Option<usize>,
        }
        let row = match self {
            Self::Data { row, .. } => *row,
            _ => None,
        };
        let body = Body {
            schema: crate::output::SCHEMA,
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
            row,
        };
        serde_json::to_string(&body).expect("error body serializes")
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidParameter(_)
            | CoreError::InvalidDimension(_)
            | CoreError::InsufficientReplicates { .. } => Self::Config(msg),
            CoreError::Domain { .. } | CoreError::Structural(_) | CoreError::Precondition(_) => {
                Self::Data {
                    message: msg,
                    row: None,
                }
            }
            CoreError::Singular(_)
            | CoreError::DegenerateSmoothing { .. }
            | CoreError::Covariance { .. }
            | CoreError::TooManyFailures { .. } => Self::Numerical(msg),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
