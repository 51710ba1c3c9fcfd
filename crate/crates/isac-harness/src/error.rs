//! Harness error type and the exit-code contract.

use isac_core::IsacError;
use thiserror::Error;

/// Exit code for a configuration error.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for a runtime stage failure.
pub const EXIT_RUNTIME: i32 = 3;

/// Errors raised while loading configuration or running a pipeline.
#[derive(Debug, Error)]
pub enum HarnessError {
    /// The config file is not valid TOML or has unknown or mistyped keys.
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },

    /// A config value violates a constraint.
    #[error("invalid configuration: `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// A pipeline stage failed.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: IsacError,
    },

    /// Reading or writing a file failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Convenience alias.
pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Parse { .. } | HarnessError::Config { .. } => EXIT_CONFIG,
            HarnessError::Stage { .. } | HarnessError::Io { .. } => EXIT_RUNTIME,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        HarnessError::Config { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::config("a", "b").exit_code(), 2);
        let p = HarnessError::Parse { path: "x".into(), line: 1, column: 2, message: "m".into() };
        assert_eq!(p.exit_code(), 2);
        assert_eq!(p.to_string(), "x:1:2: m");
        let s = HarnessError::Stage { stage: "track".into(), source: IsacError::Domain("d".into()) };
        assert_eq!(s.exit_code(), 3);
        assert!(s.to_string().contains("`track`"));
    }
}
