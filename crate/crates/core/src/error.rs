//! Crate-wide error type.
//!
//! A single enum keeps error handling uniform across the pipeline. The CLI
//! distinguishes backend failures (exit code 2) from everything else (exit
//! code 1) via [`Error::is_backend`], and the retry layer uses
//! [`Error::is_transient`] to decide whether a second attempt can help.

/// All failure modes surfaced by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A record file could not be parsed; `line` is 1-based.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// An I/O failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A corpus record violates a structural or referential invariant.
    #[error("corpus integrity: {0}")]
    Integrity(String),

    /// Invalid or inconsistent configuration.
    #[error("config: {0}")]
    Config(String),

    /// An argument outside an operation's domain (empty input, n = 0, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Unified-diff text that cannot be interpreted.
    #[error("malformed patch: {0}")]
    Patch(String),

    /// The scripted backend has no rule matching the request.
    #[error("no scripted rule matches request digest {0}")]
    NoMatchingRule(String),

    /// Transport-level backend failure; retried before being surfaced.
    #[error("backend transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    /// The remote endpoint answered with a non-retryable error status.
    #[error("backend rejected request (status {status}): {body}")]
    RemoteStatus { status: u16, body: String },

    /// Model output does not match the requested structure.
    #[error("schema violation: {0}")]
    SchemaViolation(String),

    /// The abstention model put no probability on either label token.
    #[error(
        "degenerate output for bug {bug_id}: neither \"success\" nor \"failure\" \
         among first-token alternatives"
    )]
    DegenerateOutput { bug_id: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True when the failure originates in the model backend rather than in
    /// local inputs or configuration. The CLI maps these to exit code 2.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::NoMatchingRule(_)
                | Error::Transport { .. }
                | Error::RemoteStatus { .. }
                | Error::SchemaViolation(_)
                | Error::DegenerateOutput { .. }
        )
    }

    /// True when retrying the same call could plausibly succeed. Content
    /// errors (schema violations, missing rules) never retry: a judgment must
    /// not silently vary between attempts.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
