//! Host side: compile, deploy to a local or remote worker, drive the
//! per-model or per-operator routine and produce reports and logs.

mod config;

use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use thiserror::Error;

pub use config::{
    resolve, EnvDefaults, Granularity, RunConfig, Target, DEFAULT_SEED, DEFAULT_TRIALS, ENV_BUFFER_SIZE,
    ENV_RANDOM_SEED, ENV_TRIAL_NUM,
};

use crate::analyzer::{
    self, display_name, export_log, kernel_infos, render_table, summarize_ops, summarize_trials, AnalyzerError, LogRow,
    OpMeasurement, Report, RunMeta,
};
use crate::boards::{BoardError, BoardRegistry, BoardSpec};
use crate::compiler::{compile_artifact, CompileError, DeployableModel};
use crate::model_ir::{load_model, ModelError, ModelGraph};
use crate::rpc::{chunk_model, ErrorCode, KernelFootprint, Message, RpcError, Session, PROTOCOL_VERSION};
use crate::worker::{run_server, TimingMode, WorkerConfig};

pub const WORKER_BIN_ENV: &str = "UTOE_WORKER_BIN";
pub const WORKER_BIN_NAME: &str = "utoe-worker";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Capacity,
    Transport,
    Protocol,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Validation => 10,
            ErrorCategory::Capacity => 11,
            ErrorCategory::Transport => 12,
            ErrorCategory::Protocol => 13,
        }
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("{0}")]
    Config(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("board: {0}")]
    Board(#[from] BoardError),
    #[error("{0}")]
    Compile(CompileError),
    #[error("report: {0}")]
    Analyzer(#[from] AnalyzerError),
    #[error("transport: {message} (after {attempts} attempt(s))")]
    Transport { message: String, attempts: u32 },
    #[error("no HELLO_ACK within {waited:?}")]
    HandshakeTimeout { waited: Duration },
    #[error("requested board {requested}, device reports {reported}")]
    BoardMismatch { requested: String, reported: String },
    #[error("worker error {code}: {text}")]
    Worker { code: ErrorCode, text: String },
    #[error("protocol: {0}")]
    Protocol(String),
}

impl OrchestratorError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            OrchestratorError::Config(_)
            | OrchestratorError::Model(_)
            | OrchestratorError::Board(_)
            | OrchestratorError::Analyzer(_) => ErrorCategory::Validation,
            OrchestratorError::Compile(CompileError::CapacityExceeded { .. }) => ErrorCategory::Capacity,
            OrchestratorError::Compile(_) => ErrorCategory::Validation,
            OrchestratorError::Worker { code: ErrorCode::Capacity, .. } => ErrorCategory::Capacity,
            OrchestratorError::Transport { .. } | OrchestratorError::HandshakeTimeout { .. } => {
                ErrorCategory::Transport
            }
            OrchestratorError::BoardMismatch { .. }
            | OrchestratorError::Worker { .. }
            | OrchestratorError::Protocol(_) => ErrorCategory::Protocol,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.category().exit_code()
    }
}

impl From<CompileError> for OrchestratorError {
    fn from(e: CompileError) -> Self {
        match e {
            CompileError::Model(m) => OrchestratorError::Model(m),
            other => OrchestratorError::Compile(other),
        }
    }
}

fn rpc_err(e: RpcError) -> OrchestratorError {
    match e {
        RpcError::Corrupt(f) => OrchestratorError::Protocol(format!("corrupt frame from worker: {f:?}")),
        RpcError::PayloadTooLarge { .. } | RpcError::BufferTooSmall { .. } | RpcError::FieldTooLong { .. } => {
            OrchestratorError::Protocol(e.to_string())
        }
        other => OrchestratorError::Transport { message: other.to_string(), attempts: 1 },
    }
}

/// An open, handshaken session with a worker.
pub struct Connection {
    pub session: Session,
    pub board_name: String,
    pub buffer_size: usize,
    child: Option<Child>,
    thread: Option<std::thread::JoinHandle<Result<(), RpcError>>>,
    response_timeout: Duration,
}

impl Connection {
    fn recv(&mut self) -> Result<Message, OrchestratorError> {
        match self.session.recv(Some(self.response_timeout)).map_err(rpc_err)? {
            Message::Error { code, text } => Err(OrchestratorError::Worker { code, text }),
            m => Ok(m),
        }
    }

    fn send(&mut self, m: &Message) -> Result<(), OrchestratorError> {
        self.session.send(m).map_err(rpc_err)
    }

    /// Sends BYE and waits for a local worker to exit.
    pub fn close(mut self) -> Result<(), OrchestratorError> {
        let _ = self.session.send(&Message::Bye);
        drop(self.session);
        if let Some(mut c) = self.child.take() {
            c.wait().map_err(|e| OrchestratorError::Transport { message: format!("worker wait: {e}"), attempts: 1 })?;
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        Ok(())
    }
}

/// Locates the worker executable: explicit path, then the environment,
/// then next to the running executable.
pub fn find_worker(explicit: Option<&Path>) -> Result<PathBuf, OrchestratorError> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    if let Some(p) = std::env::var_os(WORKER_BIN_ENV) {
        return Ok(PathBuf::from(p));
    }
    let exe = std::env::current_exe().map_err(|e| OrchestratorError::Config(e.to_string()))?;
    let name = format!("{WORKER_BIN_NAME}{}", std::env::consts::EXE_SUFFIX);
    let mut dir = exe.parent();
    // test binaries live one level below the executables
    for _ in 0..2 {
        if let Some(d) = dir {
            let candidate = d.join(&name);
            if candidate.is_file() {
                return Ok(candidate);
            }
            dir = d.parent();
        }
    }
    Err(OrchestratorError::Config(format!("cannot find {name}; pass --worker or set {WORKER_BIN_ENV}")))
}

/// Opens the transport and performs the HELLO handshake.
pub fn connect_target(config: &RunConfig) -> Result<Connection, OrchestratorError> {
    let (session, child, thread) = match &config.target {
        Target::Local { worker } => {
            let path = find_worker(worker.as_deref())?;
            let mut cmd = Command::new(&path);
            cmd.arg("--board")
                .arg(&config.board_name)
                .arg("--mode")
                .arg(config.timing.as_str())
                .arg("--stdio")
                .env(ENV_BUFFER_SIZE, config.buffer_size.to_string())
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit());
            if let Some(b) = &config.boards_path {
                cmd.arg("--boards").arg(b);
            }
            let mut child = cmd.spawn().map_err(|e| OrchestratorError::Transport {
                message: format!("cannot start {}: {e}", path.display()),
                attempts: 1,
            })?;
            let stdin = child.stdin.take().expect("piped");
            let stdout = child.stdout.take().expect("piped");
            (Session::new(stdout, stdin, config.buffer_size), Some(child), None)
        }
        Target::Remote(addr) => {
            let mut attempts = 0;
            let stream = loop {
                attempts += 1;
                match TcpStream::connect(addr) {
                    Ok(s) => break s,
                    Err(e) if attempts > config.connect_retries => {
                        return Err(OrchestratorError::Transport { message: format!("connect {addr}: {e}"), attempts })
                    }
                    Err(_) => std::thread::sleep(Duration::from_millis(200)),
                }
            };
            let s = Session::tcp(stream, config.buffer_size)
                .map_err(|e| OrchestratorError::Transport { message: e.to_string(), attempts })?;
            (s, None, None)
        }
        Target::InProcess { board } => {
            let (host, mut dev) = crate::rpc::duplex(config.buffer_size);
            let mut wc = WorkerConfig::new(board.clone(), config.timing);
            wc.buffer_size = config.buffer_size;
            let t = std::thread::spawn(move || run_server(&mut dev, wc));
            (host, None, Some(t))
        }
    };
    let mut conn = Connection {
        session,
        board_name: String::new(),
        buffer_size: config.buffer_size,
        child,
        thread,
        response_timeout: config.response_timeout,
    };
    conn.send(&Message::Hello { proto_version: PROTOCOL_VERSION })?;
    let reply = match conn.session.recv(Some(config.handshake_timeout)) {
        Ok(m) => m,
        Err(RpcError::Timeout { waited }) => return Err(OrchestratorError::HandshakeTimeout { waited }),
        Err(e) => return Err(rpc_err(e)),
    };
    match reply {
        Message::HelloAck { board_name, buffer_size } => {
            if board_name != config.board_name {
                let _ = conn.close_quietly();
                return Err(OrchestratorError::BoardMismatch {
                    requested: config.board_name.clone(),
                    reported: board_name,
                });
            }
            let negotiated = config.buffer_size.min(buffer_size as usize);
            if negotiated < crate::rpc::MIN_BUFFER_SIZE {
                return Err(OrchestratorError::Protocol(format!("device buffer size {buffer_size} is unusable")));
            }
            conn.session.set_buffer_size(negotiated);
            conn.buffer_size = negotiated;
            conn.board_name = board_name;
            Ok(conn)
        }
        Message::Error { code, text } => Err(OrchestratorError::Worker { code, text }),
        other => Err(OrchestratorError::Protocol(format!("expected HELLO_ACK, got {}", other.name()))),
    }
}

impl Connection {
    fn close_quietly(self) -> Result<(), OrchestratorError> {
        self.close()
    }
}

/// Uploads `model`; returns the worker's footprint report after checking it
/// against the host-side analysis.
pub fn deploy(conn: &mut Connection, model: &DeployableModel) -> Result<Vec<KernelFootprint>, OrchestratorError> {
    let image = model.to_bytes();
    let total_len = u32::try_from(image.len())
        .map_err(|_| OrchestratorError::Config(format!("model image of {} bytes is too large", image.len())))?;
    for chunk in chunk_model(&image, conn.buffer_size).map_err(rpc_err)? {
        conn.send(&chunk)?;
    }
    conn.send(&Message::LoadDone { total_len, checksum: crc32fast::hash(&image) })?;
    match conn.recv()? {
        Message::MemReport { memory_bytes, storage_bytes, per_kernel } => {
            let agrees = memory_bytes as u64 == model.memory_bytes()
                && storage_bytes as u64 == model.storage_bytes()
                && per_kernel.len() == model.kernels.len()
                && per_kernel
                    .iter()
                    .zip(model.kernel_memory.iter().zip(&model.storage.per_kernel))
                    .all(|(f, (&m, &s))| f.memory_bytes as u64 == m && f.storage_bytes as u64 == s);
            if !agrees {
                return Err(OrchestratorError::Protocol(format!(
                    "worker reports {memory_bytes} B memory / {storage_bytes} B storage, host analysis {} / {}",
                    model.memory_bytes(),
                    model.storage_bytes()
                )));
            }
            Ok(per_kernel)
        }
        other => Err(OrchestratorError::Protocol(format!("expected MEM_REPORT, got {}", other.name()))),
    }
}

/// Streams `trials` records after RUN_TRIALS.
pub fn run_trials(
    conn: &mut Connection,
    trials: u32,
    seed: u64,
) -> Result<Vec<crate::rpc::TrialRecord>, OrchestratorError> {
    conn.send(&Message::RunTrials { num_trials: trials, seed })?;
    let mut records = Vec::with_capacity(trials as usize);
    loop {
        match conn.recv()? {
            Message::TrialRecord { trial_index, latency_ns } => {
                if trial_index as usize != records.len() {
                    return Err(OrchestratorError::Protocol(format!(
                        "trial {trial_index} arrived, expected {}",
                        records.len()
                    )));
                }
                records.push(crate::rpc::TrialRecord { trial_index, latency_ns });
            }
            Message::TrialsDone { count } if count as usize == records.len() && count == trials => return Ok(records),
            other => return Err(OrchestratorError::Protocol(format!("unexpected {} during trials", other.name()))),
        }
    }
}

pub fn bench_kernels(
    conn: &mut Connection,
    kernels: usize,
    repeats: u32,
) -> Result<Vec<OpMeasurement>, OrchestratorError> {
    let mut out = Vec::with_capacity(kernels);
    for k in 0..kernels {
        let kernel_index = u16::try_from(k).map_err(|_| OrchestratorError::Config("too many kernels".into()))?;
        conn.send(&Message::BenchOp { kernel_index, repeats })?;
        match conn.recv()? {
            Message::OpResult { kernel_index: got, mean_ns, min_ns, max_ns } if got == kernel_index => {
                out.push(OpMeasurement { kernel_index: k, mean_ns, min_ns, max_ns })
            }
            other => return Err(OrchestratorError::Protocol(format!("unexpected {} for kernel {k}", other.name()))),
        }
    }
    Ok(out)
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub rendered: String,
    pub log_rows: Vec<LogRow>,
    pub model: DeployableModel,
}

fn load_inputs(config: &RunConfig) -> Result<(ModelGraph, BoardSpec), OrchestratorError> {
    let bytes = std::fs::read(&config.model_path)
        .map_err(|e| OrchestratorError::Config(format!("{}: {e}", config.model_path.display())))?;
    let graph = load_model(&bytes)?;
    let registry = match &config.boards_path {
        Some(p) => BoardRegistry::from_path(p)?,
        None => BoardRegistry::builtin(),
    };
    let board = registry.lookup(&config.board_name)?.clone();
    Ok((graph, board))
}

/// Host-side static analysis (step 1 of both routines).
pub fn prepare(config: &RunConfig) -> Result<DeployableModel, OrchestratorError> {
    config.validate()?;
    let (graph, board) = load_inputs(config)?;
    Ok(compile_artifact(&graph, &board, &config.compile)?)
}

fn finish(config: &RunConfig, output: RunOutput) -> Result<RunOutput, OrchestratorError> {
    if let Some(p) = &config.log_path {
        export_log(&output.log_rows, p)?;
    }
    if let Some(p) = &config.report_json {
        std::fs::write(p, analyzer::report_json(&output.report))
            .map_err(|e| OrchestratorError::Config(format!("{}: {e}", p.display())))?;
    }
    Ok(output)
}

fn mode_label(g: Granularity, t: TimingMode) -> String {
    format!("{}/{}", g.as_str(), t.as_str())
}

/// Per-model routine on an already connected worker.
pub fn per_model_on(
    conn: &mut Connection,
    model: &DeployableModel,
    config: &RunConfig,
) -> Result<RunOutput, OrchestratorError> {
    deploy(conn, model)?;
    let records = run_trials(conn, config.trials, config.seed)?;
    let report = summarize_trials(&records, model.memory_bytes(), model.storage_bytes())?;
    let meta = RunMeta::new(
        &config.board_name,
        model.graph.name(),
        &mode_label(Granularity::PerModel, config.timing),
        config.seed,
    );
    let log_rows = records.iter().map(|r| meta.row(r.trial_index.to_string(), r.latency_ns)).collect();
    let report = Report::PerModel(report);
    Ok(RunOutput { rendered: render_table(&report), report, log_rows, model: model.clone() })
}

/// Per-operator routine on an already connected worker.
pub fn per_op_on(
    conn: &mut Connection,
    model: &DeployableModel,
    config: &RunConfig,
) -> Result<RunOutput, OrchestratorError> {
    deploy(conn, model)?;
    let results = bench_kernels(conn, model.kernels.len(), config.repeats)?;
    let infos = kernel_infos(model);
    let report = summarize_ops(&results, &infos)?;
    let meta = RunMeta::new(
        &config.board_name,
        model.graph.name(),
        &mode_label(Granularity::PerOp, config.timing),
        config.seed,
    );
    let log_rows = results.iter().map(|r| meta.row(display_name(&infos[r.kernel_index].name), r.mean_ns)).collect();
    let report = Report::PerOp(report);
    Ok(RunOutput { rendered: render_table(&report), report, log_rows, model: model.clone() })
}

pub fn cmd_per_model(config: &RunConfig) -> Result<RunOutput, OrchestratorError> {
    let model = prepare(config)?;
    let mut conn = connect_target(config)?;
    let out = per_model_on(&mut conn, &model, config);
    conn.close()?;
    finish(config, out?)
}

pub fn cmd_per_operator(config: &RunConfig) -> Result<RunOutput, OrchestratorError> {
    let model = prepare(config)?;
    let mut conn = connect_target(config)?;
    let out = per_op_on(&mut conn, &model, config);
    conn.close()?;
    finish(config, out?)
}

pub fn cmd_eval(config: &RunConfig) -> Result<RunOutput, OrchestratorError> {
    match config.granularity {
        Granularity::PerModel => cmd_per_model(config),
        Granularity::PerOp => cmd_per_operator(config),
    }
}

/// Runs `config` once per board, each on its own session, concurrently.
/// Log rows are written by the caller in board order.
pub fn sweep(config: &RunConfig, boards: &[String]) -> Vec<(String, Result<RunOutput, OrchestratorError>)> {
    std::thread::scope(|s| {
        let handles: Vec<_> = boards
            .iter()
            .map(|b| {
                let mut c = config.clone();
                c.board_name = b.clone();
                c.log_path = None;
                c.report_json = None;
                if let Target::InProcess { .. } = c.target {
                    let registry = match &c.boards_path {
                        Some(p) => BoardRegistry::from_path(p),
                        None => Ok(BoardRegistry::builtin()),
                    };
                    if let Ok(spec) = registry.and_then(|r| r.lookup(b).cloned()) {
                        c.target = Target::InProcess { board: spec };
                    }
                }
                (b.clone(), s.spawn(move || cmd_eval(&c)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(b, h)| {
                let r = h.join().unwrap_or_else(|_| Err(OrchestratorError::Protocol("sweep worker panicked".into())));
                (b, r)
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::{save_model, zoo};

    fn write_model(dir: &Path, g: &ModelGraph) -> PathBuf {
        let p = dir.join(format!("{}.json", g.name()));
        std::fs::write(&p, save_model(g)).unwrap();
        p
    }

    fn in_process(model: PathBuf, board: &str) -> RunConfig {
        let spec = BoardRegistry::builtin().lookup(board).unwrap().clone();
        let mut c = RunConfig::new(model, board);
        c.timing = TimingMode::Costmodel;
        c.target = Target::InProcess { board: spec };
        c
    }

    #[test]
    fn per_model_sinus_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(dir.path(), &zoo::sinus());
        let mut c = in_process(path, "stm32f746g-disco");
        c.seed = 42;
        let a = cmd_per_model(&c).unwrap();
        let b = cmd_per_model(&c).unwrap();
        assert_eq!(a.rendered, b.rendered);
        let Report::PerModel(r) = &a.report else { panic!() };
        assert_eq!(r.num_trials, 10);
        assert_eq!(r.min_ms, r.max_ms);
        assert_eq!(r.min_ms, r.median_ms);
    }

    #[test]
    fn per_op_matches_per_model_total() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(dir.path(), &zoo::sinus());
        let mut c = in_process(path, "stm32f746g-disco");
        let pm = cmd_per_model(&c).unwrap();
        c.granularity = Granularity::PerOp;
        let po = cmd_per_operator(&c).unwrap();
        let total: u64 = po.log_rows.iter().map(|r| r.latency_ns).sum();
        assert!(pm.log_rows.iter().all(|r| r.latency_ns == total));
        let Report::PerOp(r) = &po.report else { panic!() };
        let names: Vec<&str> = r.rows.iter().map(|x| x.op_name.as_str()).collect();
        assert_eq!(names, ["fused_nn_dense_add_nn_relu", "fused_nn_dense_add_nn_relu_1", "fused_nn_dense_add"]);
    }

    #[test]
    fn board_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(dir.path(), &zoo::sinus());
        let mut c = in_process(path, "stm32f746g-disco");
        c.target = Target::InProcess { board: BoardRegistry::builtin().lookup("nrf52dk").unwrap().clone() };
        match connect_target(&c) {
            Err(e @ OrchestratorError::BoardMismatch { .. }) => assert_eq!(e.category(), ErrorCategory::Protocol),
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("handshake accepted a different board"),
        }
    }

    #[test]
    fn capacity_is_reported_before_deploying() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(dir.path(), &zoo::lenet5());
        let mut c = in_process(path, "hifive1b");
        c.compile.runtime_overhead_bytes = 16 * 1024;
        let e = cmd_per_model(&c).unwrap_err();
        assert_eq!(e.exit_code(), 11, "{e}");
    }

    #[test]
    fn remote_connection_refused_is_transport() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(dir.path(), &zoo::sinus());
        let mut c = in_process(path, "nrf52dk");
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        drop(l);
        c.target = Target::Remote(addr.to_string());
        c.connect_retries = 1;
        let e = cmd_per_model(&c).unwrap_err();
        assert_eq!(e.category(), ErrorCategory::Transport);
        assert!(e.to_string().contains("2 attempt"), "{e}");
    }

    #[test]
    fn silent_peer_times_out() {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        let keep = std::thread::spawn(move || {
            let (s, _) = l.accept().unwrap();
            std::thread::sleep(Duration::from_millis(600));
            drop(s);
        });
        let dir = tempfile::tempdir().unwrap();
        let mut c = in_process(write_model(dir.path(), &zoo::sinus()), "nrf52dk");
        c.target = Target::Remote(addr.to_string());
        c.handshake_timeout = Duration::from_millis(200);
        assert!(matches!(connect_target(&c), Err(OrchestratorError::HandshakeTimeout { .. })));
        keep.join().unwrap();
    }

    #[test]
    fn sweep_orders_boards() {
        let dir = tempfile::tempdir().unwrap();
        let c = in_process(write_model(dir.path(), &zoo::lenet5()), "nrf52dk");
        let boards: Vec<String> = ["b-l072z-lrwan1", "samr21-xpro", "nucleo-wl55jc", "stm32f746g-disco"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let res = sweep(&c, &boards);
        let lat: Vec<f64> = res
            .iter()
            .map(|(_, r)| match &r.as_ref().unwrap().report {
                Report::PerModel(p) => p.median_ms,
                _ => unreachable!(),
            })
            .collect();
        assert!(lat[3] < lat[2] && lat[2] < lat[1] && lat[1] < lat[0], "{lat:?}");
    }
}
