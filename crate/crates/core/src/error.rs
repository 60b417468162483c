use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),

    #[error("invalid quaternion: norm {norm} deviates from 1")]
    InvalidQuaternion { norm: f64 },

    #[error("insufficient gyro coverage: samples span [{first_ns}, {last_ns}] ns, need [{start_ns}, {end_ns}] ns")]
    InsufficientCoverage {
        first_ns: i64,
        last_ns: i64,
        start_ns: i64,
        end_ns: i64,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("homography is not rotation-only (K^-1 H K off by {deviation:.3e})")]
    Decomposition { deviation: f64 },

    #[error("degenerate projection at pixel ({x}, {y}): w = {w:.3e}")]
    DegenerateProjection { x: f64, y: f64, w: f64 },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("ordering error at line {line}: timestamp {timestamp_ns} does not increase")]
    Ordering { line: usize, timestamp_ns: i64 },

    #[error("length error: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 for validation/format problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::File { source, .. } => source.exit_code(),
            Error::InvalidRotation(_)
            | Error::InvalidQuaternion { .. }
            | Error::Decomposition { .. }
            | Error::DegenerateProjection { .. }
            | Error::DegenerateConfiguration(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Argument(message()))
    }
}
