//! The simulated device: receives a deployable model over RPC, runs
//! inference in its static arena and reports latencies.

mod exec;
pub mod input;

use std::fmt;
use std::str::FromStr;

pub use exec::{dequantize_value, quantize_value, round_half_even, Executor, KernelTiming, Scalar};
pub use input::generate_input;

use crate::boards::BoardSpec;
use crate::compiler::DeployableModel;
pub use crate::rpc::TrialRecord;
use crate::rpc::{DecodeEvent, ErrorCode, FrameError, KernelFootprint, Message, RpcError, Session, MIN_BUFFER_SIZE};

/// Largest model image a worker accepts, independent of board limits.
pub const MAX_IMAGE_BYTES: usize = 64 << 20;
pub const DEFAULT_REPEATS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimingMode {
    Wallclock,
    Costmodel,
}

impl TimingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TimingMode::Wallclock => "wallclock",
            TimingMode::Costmodel => "costmodel",
        }
    }
}

impl fmt::Display for TimingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TimingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "wallclock" => Ok(TimingMode::Wallclock),
            "costmodel" => Ok(TimingMode::Costmodel),
            other => Err(format!("unknown timing mode {other:?} (expected wallclock or costmodel)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub board: BoardSpec,
    pub timing: TimingMode,
    pub buffer_size: usize,
    pub default_repeats: u32,
}

impl WorkerConfig {
    pub fn new(board: BoardSpec, timing: TimingMode) -> Self {
        WorkerConfig { board, timing, buffer_size: crate::rpc::DEFAULT_BUFFER_SIZE, default_repeats: DEFAULT_REPEATS }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.buffer_size < MIN_BUFFER_SIZE {
            return Err(format!("buffer size {} is below {MIN_BUFFER_SIZE}", self.buffer_size));
        }
        if self.default_repeats == 0 {
            return Err("default repeats must be at least 1".into());
        }
        Ok(())
    }
}

/// A model accepted by the worker, ready to execute.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: DeployableModel,
    pub executor: Executor,
    timing: TimingMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadError {
    pub code: ErrorCode,
    pub text: String,
}

impl LoadError {
    fn new(code: ErrorCode, text: impl Into<String>) -> Self {
        LoadError { code, text: text.into() }
    }
}

impl LoadedModel {
    /// Accepts `model` for `board`, refusing it when it does not fit.
    pub fn new(model: DeployableModel, board: &BoardSpec, timing: TimingMode) -> Result<Self, LoadError> {
        if model.board.name != board.name {
            return Err(LoadError::new(
                ErrorCode::BadArg,
                format!("model compiled for {}, worker is {}", model.board.name, board.name),
            ));
        }
        if model.memory_bytes() > board.ram_bytes {
            return Err(LoadError::new(
                ErrorCode::Capacity,
                format!("needs {} bytes of RAM, board has {}", model.memory_bytes(), board.ram_bytes),
            ));
        }
        if model.storage_bytes() > board.flash_bytes {
            return Err(LoadError::new(
                ErrorCode::Capacity,
                format!("needs {} bytes of flash, board has {}", model.storage_bytes(), board.flash_bytes),
            ));
        }
        let cost: Vec<u64> = model.kernels.iter().map(|k| board.latency_ns(k)).collect();
        let executor = Executor::new(&model, &cost);
        Ok(LoadedModel { model, executor, timing })
    }

    pub fn from_image(image: &[u8], board: &BoardSpec, timing: TimingMode) -> Result<Self, LoadError> {
        let model =
            DeployableModel::from_bytes(image).map_err(|e| LoadError::new(ErrorCode::Malformed, e.to_string()))?;
        Self::new(model, board, timing)
    }

    pub fn mem_report(&self) -> Message {
        let clamp = |v: u64| v.min(u32::MAX as u64) as u32;
        Message::MemReport {
            memory_bytes: clamp(self.model.memory_bytes()),
            storage_bytes: clamp(self.model.storage_bytes()),
            per_kernel: self
                .model
                .kernel_memory
                .iter()
                .zip(&self.model.storage.per_kernel)
                .map(|(&m, &s)| KernelFootprint { memory_bytes: clamp(m), storage_bytes: clamp(s) })
                .collect(),
        }
    }

    /// One inference on the `(seed, trial)` input; latency per timing mode.
    pub fn run_trial(&mut self, seed: u64, trial: u32) -> TrialRecord {
        self.executor.fill_inputs(seed, trial as u64);
        let wall = self.executor.run();
        let latency_ns = match self.timing {
            TimingMode::Wallclock => wall,
            TimingMode::Costmodel => self.executor.cost_ns(),
        };
        TrialRecord { trial_index: trial, latency_ns }
    }

    /// Times kernel `k` over `repeats` runs on the seed-0 input; returns
    /// (mean, min, max) in ns.
    pub fn bench_operator(&mut self, k: usize, repeats: u32) -> (u64, u64, u64) {
        self.executor.fill_inputs(0, 0);
        for j in 0..k {
            self.executor.run_kernel(j);
        }
        let (mut sum, mut min, mut max) = (0u128, u64::MAX, 0u64);
        for _ in 0..repeats.max(1) {
            let t = self.executor.run_kernel(k);
            let ns = match self.timing {
                TimingMode::Wallclock => t.wall_ns,
                TimingMode::Costmodel => t.cost_ns,
            };
            sum += ns as u128;
            min = min.min(ns);
            max = max.max(ns);
        }
        let n = repeats.max(1) as u128;
        let mean = ((sum + n / 2) / n) as u64;
        (mean, min, max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    Idle,
    PerModel,
    PerOp,
}

/// Worker-side protocol state for one session.
pub struct Server {
    config: WorkerConfig,
    image: Vec<u8>,
    load_error: Option<LoadError>,
    model: Option<LoadedModel>,
    flow: Flow,
}

impl Server {
    pub fn new(config: WorkerConfig) -> Self {
        Server { config, image: Vec::new(), load_error: None, model: None, flow: Flow::Idle }
    }

    pub fn model(&self) -> Option<&LoadedModel> {
        self.model.as_ref()
    }

    fn error(code: ErrorCode, text: impl Into<String>) -> Message {
        Message::Error { code, text: text.into() }
    }

    /// Handles one message, sending any replies. Returns `false` on BYE.
    pub fn handle(&mut self, msg: Message, session: &mut Session) -> Result<bool, RpcError> {
        match msg {
            Message::Hello { proto_version } => {
                if proto_version != crate::rpc::PROTOCOL_VERSION {
                    session.send(&Self::error(
                        ErrorCode::Unsupported,
                        format!("protocol version {proto_version} not supported"),
                    ))?;
                } else {
                    session.send(&Message::HelloAck {
                        board_name: self.config.board.name.clone(),
                        buffer_size: self.config.buffer_size as u32,
                    })?;
                }
            }
            Message::LoadModelChunk { offset, bytes } => {
                // chunks are not acknowledged; problems surface at LOAD_DONE
                if offset == 0 {
                    self.image.clear();
                    self.load_error = None;
                }
                if self.load_error.is_none() {
                    if offset as usize != self.image.len() {
                        self.load_error = Some(LoadError::new(
                            ErrorCode::Malformed,
                            format!("chunk at offset {offset}, expected {}", self.image.len()),
                        ));
                    } else if self.image.len() + bytes.len() > MAX_IMAGE_BYTES {
                        self.load_error = Some(LoadError::new(ErrorCode::Capacity, "model image too large"));
                    } else {
                        self.image.extend_from_slice(&bytes);
                    }
                }
            }
            Message::LoadDone { total_len, checksum } => {
                let image = std::mem::take(&mut self.image);
                let outcome = match self.load_error.take() {
                    Some(e) => Err(e),
                    None if total_len as usize != image.len() => Err(LoadError::new(
                        ErrorCode::Malformed,
                        format!("received {} bytes, LOAD_DONE announces {total_len}", image.len()),
                    )),
                    None if crc32fast::hash(&image) != checksum => {
                        Err(LoadError::new(ErrorCode::Checksum, "model image checksum mismatch"))
                    }
                    None => LoadedModel::from_image(&image, &self.config.board, self.config.timing),
                };
                self.flow = Flow::Idle;
                match outcome {
                    Ok(m) => {
                        let report = m.mem_report();
                        self.model = Some(m);
                        send_report(session, &report)?;
                    }
                    Err(e) => {
                        self.model = None;
                        session.send(&Self::error(e.code, e.text))?;
                    }
                }
            }
            Message::MemQuery => match &self.model {
                Some(m) => send_report(session, &m.mem_report())?,
                None => session.send(&Self::error(ErrorCode::NoModel, "no model loaded"))?,
            },
            Message::RunTrials { num_trials, seed } => {
                let Some(m) = self.model.as_mut() else {
                    session.send(&Self::error(ErrorCode::NoModel, "no model loaded"))?;
                    return Ok(true);
                };
                if num_trials == 0 {
                    session.send(&Self::error(ErrorCode::BadArg, "num_trials must be at least 1"))?;
                } else if self.flow == Flow::PerOp {
                    session.send(&Self::error(ErrorCode::BadState, "session is in per-operator mode"))?;
                } else {
                    self.flow = Flow::PerModel;
                    for t in 0..num_trials {
                        let r = m.run_trial(seed, t);
                        session.send(&Message::TrialRecord { trial_index: r.trial_index, latency_ns: r.latency_ns })?;
                    }
                    session.send(&Message::TrialsDone { count: num_trials })?;
                }
            }
            Message::BenchOp { kernel_index, repeats } => {
                let Some(m) = self.model.as_mut() else {
                    session.send(&Self::error(ErrorCode::NoModel, "no model loaded"))?;
                    return Ok(true);
                };
                let kernels = m.executor.kernel_count();
                if kernel_index as usize >= kernels {
                    session.send(&Self::error(
                        ErrorCode::BadIndex,
                        format!("kernel {kernel_index} out of range (model has {kernels})"),
                    ))?;
                } else if self.flow == Flow::PerModel {
                    session.send(&Self::error(ErrorCode::BadState, "session is in per-model mode"))?;
                } else {
                    self.flow = Flow::PerOp;
                    let repeats = if repeats == 0 { self.config.default_repeats } else { repeats };
                    let (mean_ns, min_ns, max_ns) = m.bench_operator(kernel_index as usize, repeats);
                    session.send(&Message::OpResult { kernel_index, mean_ns, min_ns, max_ns })?;
                }
            }
            Message::Bye => return Ok(false),
            other => {
                session
                    .send(&Self::error(ErrorCode::Unsupported, format!("{} is not a host request", other.name())))?;
            }
        }
        Ok(true)
    }

    fn handle_frame_error(&mut self, error: FrameError, session: &mut Session) -> Result<(), RpcError> {
        let reply = match error {
            // stray bytes and a cut-off tail have nothing to answer
            FrameError::BadMagic | FrameError::Truncated => return Ok(()),
            FrameError::CrcError { .. } => Self::error(ErrorCode::Checksum, "frame CRC mismatch"),
            FrameError::UnknownType(t) => {
                Self::error(ErrorCode::Unsupported, format!("unknown message type 0x{t:02x}"))
            }
            FrameError::Oversize { claimed, limit } => {
                Self::error(ErrorCode::Malformed, format!("payload of {claimed} bytes exceeds {limit}"))
            }
            FrameError::Malformed { reason, .. } => Self::error(ErrorCode::Malformed, reason),
        };
        session.send(&reply)
    }
}

/// A MEM_REPORT too large for the negotiated buffer becomes an in-band
/// error instead of ending the session.
fn send_report(session: &mut Session, report: &Message) -> Result<(), RpcError> {
    match session.send(report) {
        Err(RpcError::PayloadTooLarge { actual, limit }) => session.send(&Message::Error {
            code: ErrorCode::Capacity,
            text: format!("memory report of {actual} bytes exceeds the {limit}-byte payload limit"),
        }),
        other => other,
    }
}

/// Serves one session until BYE or until the peer closes the stream.
pub fn run_server(session: &mut Session, config: WorkerConfig) -> Result<(), RpcError> {
    config.validate().map_err(|e| RpcError::Io(format!("invalid worker config: {e}")))?;
    session.set_buffer_size(config.buffer_size);
    let mut server = Server::new(config);
    loop {
        match session.recv_event(None) {
            Ok(DecodeEvent::Frame { message, .. }) => {
                if !server.handle(message, session)? {
                    return Ok(());
                }
            }
            Ok(DecodeEvent::Error { error, .. }) => server.handle_frame_error(error, session)?,
            Err(RpcError::Closed) => return Ok(()),
            Err(e) => return Err(e),
        }
    }
}
