use std::fmt;

/// A single offending key found while validating a scenario or calibration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("payload of {len} B exceeds the {max} B limit")]
    PayloadTooLarge { len: usize, max: usize },

    #[error("calibration missing: {0}")]
    CalibrationMissing(String),

    #[error("invalid configuration: {}", join_issues(.0))]
    Validation(Vec<ConfigIssue>),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("battery model: {0}")]
    Battery(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::PayloadTooLarge { .. }
                | Error::CalibrationMissing(_)
                | Error::Validation(_)
                | Error::Schema { .. }
                | Error::Battery(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Parses a JSON document, reporting the dotted path of the first offending key.
pub(crate) fn from_json_str<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        Error::Schema {
            path,
            message: inner.to_string(),
        }
    })
}
