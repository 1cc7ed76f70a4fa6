use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an argument contract (bad range, mismatched lengths, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A protocol-level violation: pool exhaustion, unexpected frame, bad state.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The peer spoke an incompatible protocol version.
    #[error("handshake failed: {0}")]
    Handshake(String),

    /// Malformed wire data (truncated frame, bad length prefix, unknown tag).
    #[error("framing error: {0}")]
    Framing(String),

    /// Input file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Underlying socket or file I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub fn framing(msg: impl Into<String>) -> Self {
        Error::Framing(msg.into())
    }

    /// Stable machine-readable category, used for CLI exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "config",
            Error::Protocol(_) => "protocol",
            Error::Handshake(_) => "handshake",
            Error::Framing(_) => "framing",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
