use super::crc::crc16_ccitt_false;
use super::message::{Message, PayloadError};
use super::RpcError;

pub const MAGIC: [u8; 2] = [0x55, 0x54];
pub const PROTOCOL_VERSION: u8 = 1;
/// magic (2) + version + type + seq (2) + payload_len (2) + crc (2)
pub const FRAME_OVERHEAD: usize = 10;
const HEADER_LEN: usize = 8;
pub const DEFAULT_BUFFER_SIZE: usize = 512;
pub const MIN_BUFFER_SIZE: usize = 32;

/// Largest payload a frame may carry under `buffer_size`.
pub fn payload_limit(buffer_size: usize) -> usize {
    buffer_size.saturating_sub(FRAME_OVERHEAD).min(u16::MAX as usize)
}

pub fn encode_frame(message: &Message, seq: u16, buffer_size: usize) -> Result<Vec<u8>, RpcError> {
    let mut out = Vec::with_capacity(FRAME_OVERHEAD + message.payload_len());
    encode_frame_into(message, seq, buffer_size, &mut out)?;
    Ok(out)
}

/// Replaces the contents of `out` with the encoded frame, reusing its
/// allocation.
pub fn encode_frame_into(message: &Message, seq: u16, buffer_size: usize, out: &mut Vec<u8>) -> Result<(), RpcError> {
    let len = message.payload_len();
    let limit = payload_limit(buffer_size);
    if len > limit {
        return Err(RpcError::PayloadTooLarge { actual: len, limit });
    }
    out.clear();
    out.extend_from_slice(&MAGIC);
    out.push(PROTOCOL_VERSION);
    out.push(message.msg_type());
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&(len as u16).to_le_bytes());
    message.encode_payload(out)?;
    debug_assert_eq!(out.len(), HEADER_LEN + len);
    let crc = crc16_ccitt_false(&out[2..]);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(())
}

/// Recoverable stream defects. None of them stop decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameError {
    /// Bytes skipped while searching for the magic (or a magic followed by
    /// an unsupported version).
    BadMagic,
    /// Header claims a payload over the buffer limit.
    Oversize {
        claimed: usize,
        limit: usize,
    },
    CrcError {
        expected: u16,
        actual: u16,
    },
    UnknownType(u8),
    Malformed {
        msg_type: u8,
        reason: String,
    },
    /// A frame start cut off by the end of the stream.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeEvent {
    Frame { seq: u16, message: Message, bytes: usize },
    Error { error: FrameError, bytes: usize },
}

impl DecodeEvent {
    /// Input bytes accounted to this event.
    pub fn bytes(&self) -> usize {
        match self {
            DecodeEvent::Frame { bytes, .. } | DecodeEvent::Error { bytes, .. } => *bytes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStatus {
    Complete,
    NeedMore,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub events: Vec<DecodeEvent>,
    pub consumed: usize,
    pub status: DecodeStatus,
}

impl DecodeOutcome {
    pub fn messages(&self) -> Vec<(u16, Message)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                DecodeEvent::Frame { seq, message, .. } => Some((*seq, message.clone())),
                DecodeEvent::Error { .. } => None,
            })
            .collect()
    }
}

/// Incremental frame decoder over an ordered byte stream.
///
/// After a CRC failure only the two magic bytes are dropped and the search
/// restarts, so a damaged length field cannot hide the frames behind it.
#[derive(Debug, Clone)]
pub struct Decoder {
    buf: Vec<u8>,
    start: usize,
    limit: usize,
    consumed: u64,
}

impl Decoder {
    pub fn new(buffer_size: usize) -> Self {
        Decoder { buf: Vec::new(), start: 0, limit: payload_limit(buffer_size), consumed: 0 }
    }

    pub fn set_buffer_size(&mut self, buffer_size: usize) {
        self.limit = payload_limit(buffer_size);
    }

    /// Total input bytes accounted to emitted events so far.
    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    /// Bytes held back waiting for the rest of a frame.
    pub fn pending(&self) -> usize {
        self.buf.len() - self.start
    }

    pub fn push(&mut self, data: &[u8]) -> Vec<DecodeEvent> {
        let mut events = Vec::new();
        self.push_into(data, &mut events);
        events
    }

    pub fn push_into(&mut self, data: &[u8], events: &mut Vec<DecodeEvent>) {
        if self.start > 0 && self.start == self.buf.len() {
            self.buf.clear();
            self.start = 0;
        }
        self.buf.extend_from_slice(data);
        self.scan(false, events);
        if self.start > 4096 && self.start * 2 > self.buf.len() {
            self.buf.drain(..self.start);
            self.start = 0;
        }
    }

    /// Ends the stream: whatever is held back is resolved into events.
    pub fn finish(&mut self) -> Vec<DecodeEvent> {
        let mut events = Vec::new();
        self.scan(true, &mut events);
        debug_assert_eq!(self.start, self.buf.len());
        self.buf.clear();
        self.start = 0;
        events
    }

    fn emit(&mut self, events: &mut Vec<DecodeEvent>, event: DecodeEvent) {
        let n = event.bytes();
        self.start += n;
        self.consumed += n as u64;
        if let (
            DecodeEvent::Error { error: FrameError::BadMagic, bytes },
            Some(DecodeEvent::Error { error: FrameError::BadMagic, bytes: prev }),
        ) = (&event, events.last_mut())
        {
            *prev += bytes;
            return;
        }
        events.push(event);
    }

    fn scan(&mut self, at_end: bool, events: &mut Vec<DecodeEvent>) {
        loop {
            let avail = &self.buf[self.start..];
            let n = avail.len();
            if n == 0 {
                return;
            }
            let mut p = 0;
            while p < n {
                if avail[p] == MAGIC[0] {
                    if p + 1 < n {
                        if avail[p + 1] == MAGIC[1] {
                            break;
                        }
                    } else if !at_end {
                        break;
                    }
                }
                p += 1;
            }
            if p > 0 {
                self.emit(events, DecodeEvent::Error { error: FrameError::BadMagic, bytes: p });
                continue;
            }
            if n < HEADER_LEN {
                if at_end {
                    let bytes = n.min(MAGIC.len());
                    self.emit(events, DecodeEvent::Error { error: FrameError::Truncated, bytes });
                    continue;
                }
                return;
            }
            if avail[2] != PROTOCOL_VERSION {
                self.emit(events, DecodeEvent::Error { error: FrameError::BadMagic, bytes: 2 });
                continue;
            }
            let msg_type = avail[3];
            let seq = u16::from_le_bytes([avail[4], avail[5]]);
            let len = u16::from_le_bytes([avail[6], avail[7]]) as usize;
            if len > self.limit {
                let error = FrameError::Oversize { claimed: len, limit: self.limit };
                self.emit(events, DecodeEvent::Error { error, bytes: 2 });
                continue;
            }
            let total = FRAME_OVERHEAD + len;
            if n < total {
                if at_end {
                    self.emit(events, DecodeEvent::Error { error: FrameError::Truncated, bytes: 2 });
                    continue;
                }
                return;
            }
            let expected = crc16_ccitt_false(&avail[2..HEADER_LEN + len]);
            let actual = u16::from_be_bytes([avail[HEADER_LEN + len], avail[HEADER_LEN + len + 1]]);
            if expected != actual {
                self.emit(events, DecodeEvent::Error { error: FrameError::CrcError { expected, actual }, bytes: 2 });
                continue;
            }
            let event = match Message::decode_payload(msg_type, &avail[HEADER_LEN..HEADER_LEN + len]) {
                Ok(message) => DecodeEvent::Frame { seq, message, bytes: total },
                Err(PayloadError::UnknownType(t)) => {
                    DecodeEvent::Error { error: FrameError::UnknownType(t), bytes: total }
                }
                Err(e) => DecodeEvent::Error {
                    error: FrameError::Malformed { msg_type, reason: e.to_string() },
                    bytes: total,
                },
            };
            self.emit(events, event);
        }
    }
}

/// Stateless decode of `buffer` under the given buffer size. A frame cut
/// off at the end is left unconsumed with [`DecodeStatus::NeedMore`].
pub fn decode_stream_with(buffer: &[u8], buffer_size: usize) -> DecodeOutcome {
    let mut d = Decoder::new(buffer_size);
    let events = d.push(buffer);
    let consumed = d.consumed() as usize;
    let status = if consumed == buffer.len() { DecodeStatus::Complete } else { DecodeStatus::NeedMore };
    DecodeOutcome { events, consumed, status }
}

/// [`decode_stream_with`] accepting any payload a frame header can express.
pub fn decode_stream(buffer: &[u8]) -> DecodeOutcome {
    decode_stream_with(buffer, u16::MAX as usize + FRAME_OVERHEAD)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialRecord {
    pub trial_index: u32,
    pub latency_ns: u64,
}

/// Frames for a record stream, one TRIAL_RECORD per frame, numbered from
/// `first_seq`.
pub fn chunk_records(records: &[TrialRecord], buffer_size: usize, first_seq: u16) -> Result<Vec<Vec<u8>>, RpcError> {
    if buffer_size < MIN_BUFFER_SIZE {
        return Err(RpcError::BufferTooSmall { size: buffer_size, min: MIN_BUFFER_SIZE });
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let msg = Message::TrialRecord { trial_index: r.trial_index, latency_ns: r.latency_ns };
            encode_frame(&msg, first_seq.wrapping_add(i as u16), buffer_size)
        })
        .collect()
}

/// Splits a deployable image into LOAD_MODEL_CHUNK messages that fit
/// `buffer_size`.
pub fn chunk_model(image: &[u8], buffer_size: usize) -> Result<Vec<Message>, RpcError> {
    if buffer_size < MIN_BUFFER_SIZE {
        return Err(RpcError::BufferTooSmall { size: buffer_size, min: MIN_BUFFER_SIZE });
    }
    let step = payload_limit(buffer_size) - 4;
    Ok(image
        .chunks(step)
        .enumerate()
        .map(|(i, c)| Message::LoadModelChunk { offset: (i * step) as u32, bytes: c.to_vec() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpc::ErrorCode;

    #[test]
    fn hello_layout() {
        let f = encode_frame(&Message::Hello { proto_version: 1 }, 0, 512).unwrap();
        assert_eq!(f.len(), 11);
        assert_eq!(&f[..4], &[0x55, 0x54, 0x01, 0x01]);
        assert_eq!(&f[4..9], &[0, 0, 1, 0, 1]);
        let crc = crc16_ccitt_false(&f[2..9]);
        assert_eq!(&f[9..], &crc.to_be_bytes());
    }

    #[test]
    fn payload_too_large() {
        let rec = Message::TrialRecord { trial_index: 0, latency_ns: 5 };
        assert_eq!(encode_frame(&rec, 0, 20), Err(RpcError::PayloadTooLarge { actual: 12, limit: 10 }));
        let chunk = Message::LoadModelChunk { offset: 0, bytes: vec![0; 60] };
        assert_eq!(encode_frame(&chunk, 0, 64), Err(RpcError::PayloadTooLarge { actual: 64, limit: 54 }));
        let fits = Message::LoadModelChunk { offset: 0, bytes: vec![0; 50] };
        assert_eq!(encode_frame(&fits, 0, 64).unwrap().len(), 64);
    }

    #[test]
    fn garbage_then_frame() {
        let mut bytes = vec![0x00, 0x55, 0xAA];
        bytes.extend(encode_frame(&Message::Bye, 7, 512).unwrap());
        let out = decode_stream(&bytes);
        assert_eq!(out.events[0], DecodeEvent::Error { error: FrameError::BadMagic, bytes: 3 });
        assert_eq!(out.messages(), vec![(7, Message::Bye)]);
        assert_eq!(out.consumed, bytes.len());
        assert_eq!(out.status, DecodeStatus::Complete);
    }

    #[test]
    fn truncated_needs_more() {
        let f = encode_frame(&Message::TrialsDone { count: 3 }, 1, 512).unwrap();
        for cut in 1..f.len() {
            let out = decode_stream(&f[..cut]);
            assert_eq!(out.status, DecodeStatus::NeedMore, "cut {cut}");
            assert_eq!(out.consumed, 0);
            assert!(out.events.is_empty());
        }
    }

    #[test]
    fn crc_error_then_recovery() {
        let mut a = encode_frame(&Message::TrialRecord { trial_index: 4, latency_ns: 99 }, 0, 512).unwrap();
        let b = encode_frame(&Message::TrialsDone { count: 5 }, 1, 512).unwrap();
        a[10] ^= 0x08;
        a.extend_from_slice(&b);
        let out = decode_stream(&a);
        assert!(matches!(out.events[0], DecodeEvent::Error { error: FrameError::CrcError { .. }, .. }));
        assert_eq!(out.messages(), vec![(1, Message::TrialsDone { count: 5 })]);
        assert_eq!(out.consumed, a.len());
    }

    #[test]
    fn unknown_type_is_reported() {
        let mut f = encode_frame(&Message::Bye, 0, 512).unwrap();
        f[3] = 0x55;
        let crc = crc16_ccitt_false(&f[2..8]);
        f[8..].copy_from_slice(&crc.to_be_bytes());
        let out = decode_stream(&f);
        assert_eq!(out.events, vec![DecodeEvent::Error { error: FrameError::UnknownType(0x55), bytes: 10 }]);
    }

    #[test]
    fn wrong_payload_length_is_malformed() {
        let mut f = encode_frame(&Message::TrialsDone { count: 1 }, 0, 512).unwrap();
        // declare HELLO (1-byte payload) over the 4-byte body
        f[3] = 0x01;
        let n = f.len();
        let crc = crc16_ccitt_false(&f[2..n - 2]);
        f[n - 2..].copy_from_slice(&crc.to_be_bytes());
        let out = decode_stream(&f);
        assert!(matches!(out.events[0], DecodeEvent::Error { error: FrameError::Malformed { msg_type: 1, .. }, .. }));
    }

    #[test]
    fn finish_resolves_a_fake_long_header() {
        // a magic with a huge (but legal) length, followed by a real frame
        let mut bytes = vec![0x55, 0x54, 0x01, 0x20, 0x00, 0x00, 0xF0, 0x01];
        let real = encode_frame(&Message::MemQuery, 3, 512).unwrap();
        bytes.extend_from_slice(&real);
        let mut d = Decoder::new(512);
        let first = d.push(&bytes);
        assert!(first.is_empty());
        let rest = d.finish();
        let frames: Vec<_> = rest.iter().filter(|e| matches!(e, DecodeEvent::Frame { .. })).collect();
        assert_eq!(frames.len(), 1);
        assert_eq!(d.consumed() as usize, bytes.len());
    }

    #[test]
    fn oversize_header_is_skipped() {
        let mut bytes = vec![0x55, 0x54, 0x01, 0x20, 0x00, 0x00, 0xFF, 0xFF];
        bytes.extend(encode_frame(&Message::MemQuery, 3, 512).unwrap());
        let out = decode_stream_with(&bytes, 512);
        assert!(matches!(out.events[0], DecodeEvent::Error { error: FrameError::Oversize { .. }, bytes: 2 }));
        assert_eq!(out.messages(), vec![(3, Message::MemQuery)]);
    }

    #[test]
    fn records_chunking() {
        let recs: Vec<TrialRecord> =
            (0..100).map(|i| TrialRecord { trial_index: i, latency_ns: 1000 + i as u64 }).collect();
        let frames = chunk_records(&recs, 512, 0).unwrap();
        assert!(frames.iter().all(|f| f.len() <= 512));
        let joined: Vec<u8> = frames.concat();
        let got: Vec<TrialRecord> = decode_stream(&joined)
            .messages()
            .into_iter()
            .map(|(_, m)| match m {
                Message::TrialRecord { trial_index, latency_ns } => TrialRecord { trial_index, latency_ns },
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(got, recs);
        assert_eq!(chunk_records(&recs[..1], 512, 0).unwrap().len(), 1);
        assert_eq!(chunk_records(&recs, 16, 0), Err(RpcError::BufferTooSmall { size: 16, min: 32 }));
    }

    #[test]
    fn model_chunks_fit_and_reassemble() {
        let image: Vec<u8> = (0..2000u32).map(|i| (i * 7) as u8).collect();
        let msgs = chunk_model(&image, 64).unwrap();
        let mut back = Vec::new();
        for m in &msgs {
            assert!(encode_frame(m, 0, 64).is_ok());
            if let Message::LoadModelChunk { offset, bytes } = m {
                assert_eq!(*offset as usize, back.len());
                back.extend_from_slice(bytes);
            }
        }
        assert_eq!(back, image);
    }

    #[test]
    fn error_codes_round_trip() {
        for c in 0..20u16 {
            assert_eq!(ErrorCode::from_u16(c).to_u16(), c);
        }
    }
}
