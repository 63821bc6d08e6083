use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use utoe_core::analyzer::export_log;
use utoe_core::boards::BoardRegistry;
use utoe_core::compiler::CompileConfig;
use utoe_core::model_ir::{save_model, zoo};
use utoe_core::orchestrator::{
    cmd_eval, resolve, sweep, EnvDefaults, Granularity, OrchestratorError, RunConfig, Target, DEFAULT_SEED,
    DEFAULT_TRIALS,
};
use utoe_core::rpc::DEFAULT_BUFFER_SIZE;
use utoe_core::worker::TimingMode;

#[derive(Parser)]
#[command(name = "utoe", version, about = "Evaluate inference cost of small neural networks on microcontroller boards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile, deploy and measure one model on one board.
    Eval(EvalArgs),
    /// Run the same evaluation on several boards concurrently.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Board names, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        boards_list: Vec<String>,
    },
    /// Write a built-in model to a file.
    ExportModel {
        /// Built-in model name.
        #[arg(long, value_parser = zoo::NAMES)]
        zoo: String,
        /// Output path; standard output when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// List the board registry.
    Boards {
        /// Registry file to list instead of the built-in one.
        #[arg(long)]
        boards: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Wallclock,
    Costmodel,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Board name from the registry.
    #[arg(long)]
    board: String,
    /// Connect to a listening worker instead of spawning one.
    #[arg(long, value_name = "HOST:PORT")]
    remote: Option<String>,
}

#[derive(Args)]
struct CommonArgs {
    /// Model file in the JSON model format.
    #[arg(long)]
    model: PathBuf,
    /// Benchmark every kernel instead of whole inferences.
    #[arg(long)]
    per_op: bool,
    /// Inferences per run [env: UTOE_TRIAL_NUM, default 10].
    #[arg(long)]
    trials: Option<u32>,
    /// Input generator seed [env: UTOE_RANDOM_SEED, default 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Latency source: host timer or board cost model.
    #[arg(long, value_enum, default_value = "costmodel")]
    mode: Mode,
    /// CSV log to append raw records to.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Board registry file replacing the built-in one.
    #[arg(long)]
    boards: Option<PathBuf>,
    /// RPC frame buffer in bytes [env: UTOE_RPC_BUFFER_SIZE, default 512].
    #[arg(long)]
    buffer_size: Option<usize>,
    /// Timing repetitions per kernel in per-op mode.
    #[arg(long, default_value_t = 10)]
    repeats: u32,
    /// Compile options as a JSON object.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    report_json: Option<PathBuf>,
    /// Worker executable for local runs.
    #[arg(long)]
    worker: Option<PathBuf>,
}

fn run_config(common: &CommonArgs, board: &str, remote: Option<&str>) -> Result<RunConfig, OrchestratorError> {
    let env = EnvDefaults::from_env()?;
    let mut c = RunConfig::new(&common.model, board);
    c.granularity = if common.per_op { Granularity::PerOp } else { Granularity::PerModel };
    c.trials = resolve(common.trials, env.trials, DEFAULT_TRIALS);
    c.seed = resolve(common.seed, env.seed, DEFAULT_SEED);
    c.buffer_size = resolve(common.buffer_size, env.buffer_size, DEFAULT_BUFFER_SIZE);
    c.timing = match common.mode {
        Mode::Wallclock => TimingMode::Wallclock,
        Mode::Costmodel => TimingMode::Costmodel,
    };
    c.target = match remote {
        Some(addr) => Target::Remote(addr.to_string()),
        None => Target::Local { worker: common.worker.clone() },
    };
    c.log_path = common.log.clone();
    c.boards_path = common.boards.clone();
    c.repeats = common.repeats;
    c.report_json = common.report_json.clone();
    if let Some(p) = &common.config {
        let text = std::fs::read(p).map_err(|e| OrchestratorError::Config(format!("{}: {e}", p.display())))?;
        c.compile = CompileConfig::from_json(&text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
    }
    c.validate()?;
    Ok(c)
}

fn fail(e: &OrchestratorError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

/// Writes to standard output; a closed pipe (as with `| head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn run(command: Command) -> Result<(), OrchestratorError> {
    match command {
        Command::Eval(args) => {
            let config = run_config(&args.common, &args.board, args.remote.as_deref())?;
            let out = cmd_eval(&config)?;
            emit(&out.rendered);
            Ok(())
        }
        Command::Sweep { common, boards_list } => {
            let config = run_config(&common, &boards_list[0], None)?;
            let mut first_err = None;
            let mut report = Vec::new();
            for (board, result) in sweep(&config, &boards_list) {
                match result {
                    Ok(out) => {
                        emit(&format!("== {board}\n{}", out.rendered));
                        if let Some(p) = &config.log_path {
                            export_log(&out.log_rows, p)?;
                        }
                        report.push(serde_json::json!({ "board": board, "report": out.report }));
                    }
                    Err(e) => {
                        eprintln!("{board}: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(p) = &config.report_json {
                let doc = serde_json::to_string_pretty(&report).expect("reports serialize");
                std::fs::write(p, doc).map_err(|e| OrchestratorError::Config(format!("{}: {e}", p.display())))?;
            }
            first_err.map_or(Ok(()), Err)
        }
        Command::ExportModel { zoo: name, output } => {
            let graph = zoo::by_name(&name).expect("clap restricts the zoo names");
            let doc = save_model(&graph);
            match output {
                Some(p) => {
                    std::fs::write(&p, doc).map_err(|e| OrchestratorError::Config(format!("{}: {e}", p.display())))
                }
                None => std::io::stdout().write_all(&doc).map_err(|e| OrchestratorError::Config(e.to_string())),
            }
        }
        Command::Boards { boards } => {
            let registry = match boards {
                Some(p) => BoardRegistry::from_path(&p)?,
                None => BoardRegistry::builtin(),
            };
            let mut text = format!("{:<20} {:<16} {:>8} {:>9}  core\n", "name", "mcu", "ram KB", "flash KB");
            for b in registry.boards() {
                text.push_str(&format!(
                    "{:<20} {:<16} {:>8} {:>9}  {}\n",
                    b.name,
                    b.mcu,
                    b.ram_bytes / 1024,
                    b.flash_bytes / 1024,
                    b.core_label()
                ));
            }
            emit(&text);
            Ok(())
        }
    }
}
