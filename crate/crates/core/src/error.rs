use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its valid range. `field` names the
    /// offending knob so callers can surface it to users.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("class {class} has no examples")]
    EmptyClass { class: usize },

    #[error("target EMD {target} outside [0, {max}]")]
    Domain { target: f64, max: f64 },

    #[error("partition infeasible: class {class} pool exhausted (need {needed}, have {available})")]
    Partition {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("global share infeasible: class {class} has {available} holdout examples, need {needed}")]
    Share {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("reference weights have zero norm ({0})")]
    DegenerateReference(String),

    #[error("bound input: {0}")]
    BoundInput(String),

    #[error("IDX format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_owned(),
            reason: reason.into(),
        }
    }
}
