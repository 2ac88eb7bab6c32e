use std::io;

/// Errors surfaced by frames, codecs, transports and reconciliation sessions.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("interval [{start}, {start}+{len}) exceeds length {n}")]
    IntervalOutOfRange { start: usize, len: usize, n: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed message: {0}")]
    Decode(String),

    #[error("frame file: {0}")]
    FrameFile(String),

    #[error("i/o: {0}")]
    Io(#[from] io::Error),

    #[error("peer closed the connection")]
    PeerClosed,

    /// The two parties' views of the session diverged; the session cannot continue.
    #[error("protocol corruption: {0}")]
    ProtocolCorruption(String),

    #[error("peer aborted the session: {0}")]
    Aborted(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn corruption(msg: impl Into<String>) -> Self {
        Error::ProtocolCorruption(msg.into())
    }
}
