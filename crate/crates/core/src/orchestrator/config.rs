use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use super::OrchestratorError;
use crate::boards::BoardSpec;
use crate::compiler::CompileConfig;
use crate::rpc::{DEFAULT_BUFFER_SIZE, MIN_BUFFER_SIZE};
use crate::worker::{TimingMode, DEFAULT_REPEATS};

pub const ENV_RANDOM_SEED: &str = "UTOE_RANDOM_SEED";
pub const ENV_TRIAL_NUM: &str = "UTOE_TRIAL_NUM";
pub const ENV_BUFFER_SIZE: &str = "UTOE_RPC_BUFFER_SIZE";

pub const DEFAULT_TRIALS: u32 = 10;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    PerModel,
    PerOp,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::PerModel => "per-model",
            Granularity::PerOp => "per-op",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per-model" => Ok(Granularity::PerModel),
            "per-op" => Ok(Granularity::PerOp),
            other => Err(format!("unknown granularity {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Target {
    /// Spawn a worker process and talk over its stdin/stdout.
    Local { worker: Option<PathBuf> },
    /// Connect to a listening worker at `host:port`.
    Remote(String),
    /// Run the worker on a thread of this process.
    InProcess { board: BoardSpec },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model_path: PathBuf,
    pub board_name: String,
    pub granularity: Granularity,
    pub trials: u32,
    pub seed: u64,
    pub timing: TimingMode,
    pub target: Target,
    pub log_path: Option<PathBuf>,
    pub buffer_size: usize,
    pub boards_path: Option<PathBuf>,
    pub compile: CompileConfig,
    pub repeats: u32,
    pub handshake_timeout: Duration,
    pub response_timeout: Duration,
    pub connect_retries: u32,
    pub report_json: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(model_path: impl Into<PathBuf>, board_name: impl Into<String>) -> Self {
        RunConfig {
            model_path: model_path.into(),
            board_name: board_name.into(),
            granularity: Granularity::PerModel,
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            timing: TimingMode::Costmodel,
            target: Target::Local { worker: None },
            log_path: None,
            buffer_size: DEFAULT_BUFFER_SIZE,
            boards_path: None,
            compile: CompileConfig::default(),
            repeats: DEFAULT_REPEATS,
            handshake_timeout: Duration::from_secs(5),
            response_timeout: Duration::from_secs(60),
            connect_retries: 3,
            report_json: None,
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.trials == 0 {
            return Err(OrchestratorError::Config("trials must be at least 1".into()));
        }
        if self.buffer_size < MIN_BUFFER_SIZE {
            return Err(OrchestratorError::Config(format!(
                "buffer size {} is below the minimum of {MIN_BUFFER_SIZE}",
                self.buffer_size
            )));
        }
        if self.repeats == 0 {
            return Err(OrchestratorError::Config("repeats must be at least 1".into()));
        }
        if let Target::Remote(addr) = &self.target {
            if !addr.contains(':') {
                return Err(OrchestratorError::Config(format!("remote target {addr:?} is not host:port")));
            }
        }
        Ok(())
    }
}

/// Values taken from the environment; `None` when a variable is unset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnvDefaults {
    pub seed: Option<u64>,
    pub trials: Option<u32>,
    pub buffer_size: Option<usize>,
}

fn parse_var<T: FromStr>(name: &str, value: Option<String>) -> Result<Option<T>, OrchestratorError> {
    match value {
        None => Ok(None),
        Some(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| OrchestratorError::Config(format!("{name}={v:?} is not a valid value"))),
    }
}

impl EnvDefaults {
    pub fn from_env() -> Result<Self, OrchestratorError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, OrchestratorError> {
        Ok(EnvDefaults {
            seed: parse_var(ENV_RANDOM_SEED, get(ENV_RANDOM_SEED))?,
            trials: parse_var(ENV_TRIAL_NUM, get(ENV_TRIAL_NUM))?,
            buffer_size: parse_var(ENV_BUFFER_SIZE, get(ENV_BUFFER_SIZE))?,
        })
    }
}

/// Flag over environment over built-in default.
pub fn resolve<T>(flag: Option<T>, env: Option<T>, default: T) -> T {
    flag.or(env).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let env = EnvDefaults::from_lookup(|k| match k {
            ENV_RANDOM_SEED => Some("7".into()),
            ENV_TRIAL_NUM => Some(" 25 ".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(resolve(Some(3), env.seed, DEFAULT_SEED), 3);
        assert_eq!(resolve(None, env.seed, DEFAULT_SEED), 7);
        assert_eq!(resolve(None, env.trials, DEFAULT_TRIALS), 25);
        assert_eq!(resolve(None, env.buffer_size, DEFAULT_BUFFER_SIZE), 512);
    }

    #[test]
    fn bad_env_is_rejected() {
        let e = EnvDefaults::from_lookup(|k| (k == ENV_BUFFER_SIZE).then(|| "big".to_string())).unwrap_err();
        assert!(e.to_string().contains(ENV_BUFFER_SIZE));
        assert_eq!(e.exit_code(), 10);
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::new("m.json", "nrf52dk");
        c.validate().unwrap();
        c.trials = 0;
        assert!(c.validate().is_err());
        c.trials = 1;
        c.buffer_size = 31;
        assert!(c.validate().is_err());
        c.buffer_size = 32;
        c.target = Target::Remote("localhost".into());
        assert!(c.validate().is_err());
    }
}
