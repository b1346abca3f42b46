use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the design and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the region where the model is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A value object failed its construction-time checks.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    /// The two-photon state vanished (no overlap, or everything filtered away).
    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("calibration did not converge after {iterations} iterations (residuals: star {star:.3e} 1/m, degeneracy {degeneracy:.3e} 1/m, group velocity {group_velocity:.3e})")]
    Calibration {
        iterations: usize,
        star: f64,
        degeneracy: f64,
        group_velocity: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Invalid { .. } | Error::Config { .. } => 2,
            Error::DegenerateState(_) | Error::Calibration { .. } | Error::Numerical(_) => 3,
            Error::Io { .. } => 1,
        }
    }
}
