//! Simulated device: serves the board RPC protocol over stdin/stdout or TCP.

use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, ValueEnum};
use utoe_core::boards::BoardRegistry;
use utoe_core::orchestrator::{EnvDefaults, ENV_BUFFER_SIZE};
use utoe_core::rpc::{Session, DEFAULT_BUFFER_SIZE};
use utoe_core::worker::{run_server, TimingMode, WorkerConfig};

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Wallclock,
    Costmodel,
}

#[derive(Parser)]
#[command(name = "utoe-worker", version, about = "Simulated microcontroller board speaking the device RPC protocol")]
#[command(group(ArgGroup::new("transport").required(true).args(["listen", "stdio"])))]
struct Cli {
    /// Board to simulate.
    #[arg(long)]
    board: String,
    /// Latency source reported to the host.
    #[arg(long, value_enum, default_value = "costmodel")]
    mode: Mode,
    /// Serve TCP connections on HOST:PORT (port 0 picks a free one).
    #[arg(long, value_name = "HOST:PORT")]
    listen: Option<String>,
    /// Serve one session on standard input and output.
    #[arg(long)]
    stdio: bool,
    /// Board registry file replacing the built-in one.
    #[arg(long)]
    boards: Option<PathBuf>,
    /// Exit after the first TCP session.
    #[arg(long)]
    once: bool,
}

fn exit(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("utoe-worker: {message}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let registry = match &cli.boards {
        Some(p) => BoardRegistry::from_path(p),
        None => Ok(BoardRegistry::builtin()),
    };
    let board = match registry.and_then(|r| r.lookup(&cli.board).cloned()) {
        Ok(b) => b,
        Err(e) => return exit(10, e),
    };
    let buffer_size = match EnvDefaults::from_env() {
        Ok(env) => env.buffer_size.unwrap_or(DEFAULT_BUFFER_SIZE),
        Err(e) => return exit(10, e),
    };
    let timing = match cli.mode {
        Mode::Wallclock => TimingMode::Wallclock,
        Mode::Costmodel => TimingMode::Costmodel,
    };
    let mut config = WorkerConfig::new(board, timing);
    config.buffer_size = buffer_size;
    if let Err(e) = config.validate() {
        return exit(10, format!("{e} (check {ENV_BUFFER_SIZE})"));
    }

    if cli.stdio {
        let mut session = Session::stdio(buffer_size);
        return match run_server(&mut session, config) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => exit(12, e),
        };
    }

    let addr = cli.listen.expect("clap enforces one transport");
    let listener = match TcpListener::bind(&addr) {
        Ok(l) => l,
        Err(e) => return exit(12, format!("bind {addr}: {e}")),
    };
    let local = listener.local_addr().map(|a| a.to_string()).unwrap_or(addr);
    println!("listening on {local}");
    let _ = std::io::stdout().flush();
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("utoe-worker: accept: {e}");
                continue;
            }
        };
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        let config = config.clone();
        let serve = move || match Session::tcp(stream, buffer_size) {
            Ok(mut s) => {
                if let Err(e) = run_server(&mut s, config) {
                    eprintln!("utoe-worker: session {peer}: {e}");
                }
            }
            Err(e) => eprintln!("utoe-worker: session {peer}: {e}"),
        };
        if cli.once {
            serve();
            return ExitCode::SUCCESS;
        }
        std::thread::spawn(serve);
    }
    ExitCode::SUCCESS
}
