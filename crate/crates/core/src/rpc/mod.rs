//! Framed binary protocol between host and device worker.
//!
//! Frame: `55 54 | version | type | seq (LE16) | len (LE16) | payload | crc`,
//! the CRC-16/CCITT-FALSE of everything between magic and CRC, big-endian.

mod crc;
mod frame;
mod message;
mod transport;

use std::time::Duration;

pub use crc::crc16_ccitt_false;
pub use frame::{
    chunk_model, chunk_records, decode_stream, decode_stream_with, encode_frame, encode_frame_into, payload_limit,
    DecodeEvent, DecodeOutcome, DecodeStatus, Decoder, FrameError, TrialRecord, DEFAULT_BUFFER_SIZE, FRAME_OVERHEAD,
    MAGIC, MIN_BUFFER_SIZE, PROTOCOL_VERSION,
};
pub use message::{msg_type, ErrorCode, KernelFootprint, Message, PayloadError};
pub use transport::{duplex, pipe, PipeReader, PipeWriter, Session};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RpcError {
    #[error("payload of {actual} bytes exceeds the {limit}-byte limit")]
    PayloadTooLarge { actual: usize, limit: usize },
    #[error("buffer size {size} is below the minimum of {min}")]
    BufferTooSmall { size: usize, min: usize },
    #[error("{field} has {len} entries, at most {max} fit")]
    FieldTooLong { field: &'static str, len: usize, max: usize },
    #[error("transport I/O: {0}")]
    Io(String),
    #[error("no reply within {waited:?}")]
    Timeout { waited: Duration },
    #[error("peer closed the connection")]
    Closed,
    #[error("corrupt frame: {0:?}")]
    Corrupt(FrameError),
}

impl RpcError {
    pub(crate) fn io(e: std::io::Error) -> Self {
        RpcError::Io(e.to_string())
    }
}
