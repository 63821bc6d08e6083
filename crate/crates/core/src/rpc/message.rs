use super::RpcError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    NoModel,
    BadArg,
    BadIndex,
    Capacity,
    BadState,
    Malformed,
    Checksum,
    Unsupported,
    Internal,
    Other(u16),
}

impl ErrorCode {
    pub fn to_u16(self) -> u16 {
        match self {
            ErrorCode::NoModel => 1,
            ErrorCode::BadArg => 2,
            ErrorCode::BadIndex => 3,
            ErrorCode::Capacity => 4,
            ErrorCode::BadState => 5,
            ErrorCode::Malformed => 6,
            ErrorCode::Checksum => 7,
            ErrorCode::Unsupported => 8,
            ErrorCode::Internal => 9,
            ErrorCode::Other(c) => c,
        }
    }

    pub fn from_u16(code: u16) -> Self {
        match code {
            1 => ErrorCode::NoModel,
            2 => ErrorCode::BadArg,
            3 => ErrorCode::BadIndex,
            4 => ErrorCode::Capacity,
            5 => ErrorCode::BadState,
            6 => ErrorCode::Malformed,
            7 => ErrorCode::Checksum,
            8 => ErrorCode::Unsupported,
            9 => ErrorCode::Internal,
            c => ErrorCode::Other(c),
        }
    }
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErrorCode::Other(c) => write!(f, "code {c}"),
            known => write!(f, "{known:?}"),
        }
    }
}

/// Footprint of one kernel as reported by the worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelFootprint {
    pub memory_bytes: u32,
    pub storage_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello { proto_version: u8 },
    HelloAck { board_name: String, buffer_size: u32 },
    LoadModelChunk { offset: u32, bytes: Vec<u8> },
    LoadDone { total_len: u32, checksum: u32 },
    MemQuery,
    MemReport { memory_bytes: u32, storage_bytes: u32, per_kernel: Vec<KernelFootprint> },
    RunTrials { num_trials: u32, seed: u64 },
    TrialRecord { trial_index: u32, latency_ns: u64 },
    TrialsDone { count: u32 },
    BenchOp { kernel_index: u16, repeats: u32 },
    OpResult { kernel_index: u16, mean_ns: u64, min_ns: u64, max_ns: u64 },
    Error { code: ErrorCode, text: String },
    Bye,
}

pub mod msg_type {
    pub const HELLO: u8 = 0x01;
    pub const HELLO_ACK: u8 = 0x02;
    pub const LOAD_MODEL_CHUNK: u8 = 0x10;
    pub const LOAD_DONE: u8 = 0x11;
    pub const MEM_QUERY: u8 = 0x20;
    pub const MEM_REPORT: u8 = 0x21;
    pub const RUN_TRIALS: u8 = 0x30;
    pub const TRIAL_RECORD: u8 = 0x31;
    pub const TRIALS_DONE: u8 = 0x32;
    pub const BENCH_OP: u8 = 0x40;
    pub const OP_RESULT: u8 = 0x41;
    pub const ERROR: u8 = 0x7E;
    pub const BYE: u8 = 0x7F;
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        use msg_type::*;
        match self {
            Message::Hello { .. } => HELLO,
            Message::HelloAck { .. } => HELLO_ACK,
            Message::LoadModelChunk { .. } => LOAD_MODEL_CHUNK,
            Message::LoadDone { .. } => LOAD_DONE,
            Message::MemQuery => MEM_QUERY,
            Message::MemReport { .. } => MEM_REPORT,
            Message::RunTrials { .. } => RUN_TRIALS,
            Message::TrialRecord { .. } => TRIAL_RECORD,
            Message::TrialsDone { .. } => TRIALS_DONE,
            Message::BenchOp { .. } => BENCH_OP,
            Message::OpResult { .. } => OP_RESULT,
            Message::Error { .. } => ERROR,
            Message::Bye => BYE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "HELLO",
            Message::HelloAck { .. } => "HELLO_ACK",
            Message::LoadModelChunk { .. } => "LOAD_MODEL_CHUNK",
            Message::LoadDone { .. } => "LOAD_DONE",
            Message::MemQuery => "MEM_QUERY",
            Message::MemReport { .. } => "MEM_REPORT",
            Message::RunTrials { .. } => "RUN_TRIALS",
            Message::TrialRecord { .. } => "TRIAL_RECORD",
            Message::TrialsDone { .. } => "TRIALS_DONE",
            Message::BenchOp { .. } => "BENCH_OP",
            Message::OpResult { .. } => "OP_RESULT",
            Message::Error { .. } => "ERROR",
            Message::Bye => "BYE",
        }
    }

    /// Exact payload length in bytes.
    pub fn payload_len(&self) -> usize {
        match self {
            Message::Hello { .. } => 1,
            Message::HelloAck { board_name, .. } => 5 + board_name.len(),
            Message::LoadModelChunk { bytes, .. } => 4 + bytes.len(),
            Message::LoadDone { .. } => 8,
            Message::MemQuery | Message::Bye => 0,
            Message::MemReport { per_kernel, .. } => 10 + 8 * per_kernel.len(),
            Message::RunTrials { .. } => 12,
            Message::TrialRecord { .. } => 12,
            Message::TrialsDone { .. } => 4,
            Message::BenchOp { .. } => 6,
            Message::OpResult { .. } => 26,
            Message::Error { text, .. } => 2 + text.len(),
        }
    }

    /// Appends the little-endian payload to `out`.
    pub fn encode_payload(&self, out: &mut Vec<u8>) -> Result<(), RpcError> {
        match self {
            Message::Hello { proto_version } => out.push(*proto_version),
            Message::HelloAck { board_name, buffer_size } => {
                let len = u8::try_from(board_name.len()).map_err(|_| RpcError::FieldTooLong {
                    field: "board_name",
                    len: board_name.len(),
                    max: 255,
                })?;
                out.extend_from_slice(&buffer_size.to_le_bytes());
                out.push(len);
                out.extend_from_slice(board_name.as_bytes());
            }
            Message::LoadModelChunk { offset, bytes } => {
                out.extend_from_slice(&offset.to_le_bytes());
                out.extend_from_slice(bytes);
            }
            Message::LoadDone { total_len, checksum } => {
                out.extend_from_slice(&total_len.to_le_bytes());
                out.extend_from_slice(&checksum.to_le_bytes());
            }
            Message::MemQuery | Message::Bye => {}
            Message::MemReport { memory_bytes, storage_bytes, per_kernel } => {
                let count = u16::try_from(per_kernel.len()).map_err(|_| RpcError::FieldTooLong {
                    field: "per_kernel",
                    len: per_kernel.len(),
                    max: 65535,
                })?;
                out.extend_from_slice(&memory_bytes.to_le_bytes());
                out.extend_from_slice(&storage_bytes.to_le_bytes());
                out.extend_from_slice(&count.to_le_bytes());
                for k in per_kernel {
                    out.extend_from_slice(&k.memory_bytes.to_le_bytes());
                    out.extend_from_slice(&k.storage_bytes.to_le_bytes());
                }
            }
            Message::RunTrials { num_trials, seed } => {
                out.extend_from_slice(&num_trials.to_le_bytes());
                out.extend_from_slice(&seed.to_le_bytes());
            }
            Message::TrialRecord { trial_index, latency_ns } => {
                out.extend_from_slice(&trial_index.to_le_bytes());
                out.extend_from_slice(&latency_ns.to_le_bytes());
            }
            Message::TrialsDone { count } => out.extend_from_slice(&count.to_le_bytes()),
            Message::BenchOp { kernel_index, repeats } => {
                out.extend_from_slice(&kernel_index.to_le_bytes());
                out.extend_from_slice(&repeats.to_le_bytes());
            }
            Message::OpResult { kernel_index, mean_ns, min_ns, max_ns } => {
                out.extend_from_slice(&kernel_index.to_le_bytes());
                out.extend_from_slice(&mean_ns.to_le_bytes());
                out.extend_from_slice(&min_ns.to_le_bytes());
                out.extend_from_slice(&max_ns.to_le_bytes());
            }
            Message::Error { code, text } => {
                out.extend_from_slice(&code.to_u16().to_le_bytes());
                out.extend_from_slice(text.as_bytes());
            }
        }
        Ok(())
    }

    /// Decodes a payload of the given type. Lengths must match exactly.
    pub fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<Message, PayloadError> {
        use msg_type::*;
        let mut r = Reader { buf: payload, pos: 0 };
        let msg = match msg_type {
            HELLO => Message::Hello { proto_version: r.u8()? },
            HELLO_ACK => {
                let buffer_size = r.u32()?;
                let len = r.u8()? as usize;
                let name = r.take(len)?;
                let board_name = String::from_utf8(name.to_vec()).map_err(|_| PayloadError::BadUtf8)?;
                Message::HelloAck { board_name, buffer_size }
            }
            LOAD_MODEL_CHUNK => {
                let offset = r.u32()?;
                Message::LoadModelChunk { offset, bytes: r.rest().to_vec() }
            }
            LOAD_DONE => Message::LoadDone { total_len: r.u32()?, checksum: r.u32()? },
            MEM_QUERY => Message::MemQuery,
            MEM_REPORT => {
                let memory_bytes = r.u32()?;
                let storage_bytes = r.u32()?;
                let count = r.u16()? as usize;
                if r.remaining() != count * 8 {
                    return Err(PayloadError::Length { expected: r.pos + count * 8, actual: payload.len() });
                }
                let mut per_kernel = Vec::with_capacity(count);
                for _ in 0..count {
                    per_kernel.push(KernelFootprint { memory_bytes: r.u32()?, storage_bytes: r.u32()? });
                }
                Message::MemReport { memory_bytes, storage_bytes, per_kernel }
            }
            RUN_TRIALS => Message::RunTrials { num_trials: r.u32()?, seed: r.u64()? },
            TRIAL_RECORD => Message::TrialRecord { trial_index: r.u32()?, latency_ns: r.u64()? },
            TRIALS_DONE => Message::TrialsDone { count: r.u32()? },
            BENCH_OP => Message::BenchOp { kernel_index: r.u16()?, repeats: r.u32()? },
            OP_RESULT => {
                Message::OpResult { kernel_index: r.u16()?, mean_ns: r.u64()?, min_ns: r.u64()?, max_ns: r.u64()? }
            }
            ERROR => {
                let code = ErrorCode::from_u16(r.u16()?);
                let text = String::from_utf8(r.rest().to_vec()).map_err(|_| PayloadError::BadUtf8)?;
                Message::Error { code, text }
            }
            BYE => Message::Bye,
            other => return Err(PayloadError::UnknownType(other)),
        };
        if r.remaining() != 0 {
            return Err(PayloadError::Length { expected: r.pos, actual: payload.len() });
        }
        Ok(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("payload length {actual}, layout needs {expected}")]
    Length { expected: usize, actual: usize },
    #[error("text field is not UTF-8")]
    BadUtf8,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadError> {
        if self.remaining() < n {
            return Err(PayloadError::Length { expected: self.pos + n, actual: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }
    fn u8(&mut self) -> Result<u8, PayloadError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, PayloadError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, PayloadError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, PayloadError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
