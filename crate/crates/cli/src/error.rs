use std::io;
use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const BOUND_VIOLATED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    /// `field` is a dotted path into the experiment config, e.g. `fed.batch_size`.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("cannot read config {path}: {source}")]
    ConfigRead { path: PathBuf, source: io::Error },

    #[error("cannot parse config: {0}")]
    ConfigParse(String),

    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },

    #[error(transparent)]
    Core(#[from] fedskew::Error),
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    message: String,
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// Re-labels a core configuration error with the config section it came from.
    pub fn in_section(self, section: &str) -> Self {
        match self {
            CliError::Core(fedskew::Error::Config { field, reason }) => CliError::Config {
                field: format!("{section}.{field}"),
                reason,
            },
            other => other,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } | CliError::ConfigParse(_) => "config",
            CliError::ConfigRead { .. } | CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                fedskew::Error::Io(_) => "io",
                fedskew::Error::Format(_) => "format",
                fedskew::Error::Config { .. } => "config",
                _ => "invalid_experiment",
            },
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            CliError::Config { field, .. } => Some(field),
            CliError::Core(fedskew::Error::Config { field, .. }) => Some(field),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "io" | "format" => exit::IO,
            _ => exit::CONFIG,
        }
    }

    /// Single-line machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorJson {
            error: self.kind(),
            exit_code: self.exit_code(),
            field: self.field(),
            message: self.to_string(),
        })
        .expect("error JSON serializes")
    }
}

pub(crate) trait SectionExt<T> {
    fn section(self, section: &str) -> Result<T>;
}

impl<T> SectionExt<T> for std::result::Result<T, fedskew::Error> {
    fn section(self, section: &str) -> Result<T> {
        self.map_err(|e| CliError::from(e).in_section(section))
    }
}
