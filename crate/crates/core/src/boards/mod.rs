//! Board specifications and the per-board latency cost model.
//!
//! Latency of a kernel is
//! `(macs * cycles_per_mac + elements * cycles_per_element) * penalty / freq_hz`,
//! where `penalty` is `external_flash_penalty` for boards executing from
//! external flash with the cache disabled and 1 otherwise.

mod calibrate;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibrate::{calibrate, CalibrationError, Fit, FitTarget, Measurement};

use crate::compiler::FusedKernel;

const BUILTIN_BOARDS: &str = include_str!("../../data/boards.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoreFamily {
    #[serde(rename = "cortex-m0plus")]
    CortexM0Plus,
    CortexM3,
    CortexM4,
    CortexM7,
    #[serde(rename = "riscv-rv32")]
    RiscvRv32,
    Xtensa,
}

impl CoreFamily {
    pub const ALL: [CoreFamily; 6] = [
        CoreFamily::CortexM0Plus,
        CoreFamily::CortexM3,
        CoreFamily::CortexM4,
        CoreFamily::CortexM7,
        CoreFamily::RiscvRv32,
        CoreFamily::Xtensa,
    ];

    pub fn default_coeffs(self) -> CostCoeffs {
        let cycles_per_mac = match self {
            CoreFamily::CortexM0Plus => 24.0,
            CoreFamily::CortexM3 => 17.0,
            CoreFamily::CortexM4 => 13.0,
            CoreFamily::CortexM7 => 8.0,
            CoreFamily::RiscvRv32 => 10.0,
            CoreFamily::Xtensa => 13.0,
        };
        CostCoeffs { cycles_per_mac, cycles_per_element: 4.0, external_flash_penalty: 12.0 }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CoreFamily::CortexM0Plus => "cortex-m0plus",
            CoreFamily::CortexM3 => "cortex-m3",
            CoreFamily::CortexM4 => "cortex-m4",
            CoreFamily::CortexM7 => "cortex-m7",
            CoreFamily::RiscvRv32 => "riscv-rv32",
            CoreFamily::Xtensa => "xtensa",
        }
    }
}

impl fmt::Display for CoreFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Dsp,
    Thumb2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoeffs {
    pub cycles_per_mac: f64,
    pub cycles_per_element: f64,
    pub external_flash_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoardSpec {
    pub name: String,
    pub mcu: String,
    pub core_family: CoreFamily,
    #[serde(default)]
    pub features: BTreeSet<Feature>,
    pub freq_hz: u64,
    pub ram_bytes: u64,
    pub flash_bytes: u64,
    #[serde(default)]
    pub external_flash: bool,
    #[serde(default)]
    pub cache_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_usd: Option<f64>,
    /// Defaults to the core family's coefficients when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<CostCoeffs>,
}

impl BoardSpec {
    pub fn coeffs(&self) -> CostCoeffs {
        self.coeffs.unwrap_or_else(|| self.core_family.default_coeffs())
    }

    pub fn flash_penalty(&self) -> f64 {
        if self.external_flash && !self.cache_enabled {
            self.coeffs().external_flash_penalty
        } else {
            1.0
        }
    }

    /// Cycles for a workload of `macs` multiply-accumulates and `elements`
    /// element operations.
    pub fn cycles(&self, macs: u64, elements: u64) -> f64 {
        let c = self.coeffs();
        (macs as f64 * c.cycles_per_mac + elements as f64 * c.cycles_per_element) * self.flash_penalty()
    }

    /// Latency in seconds of a kernel under the cost model.
    pub fn latency_s(&self, kernel: &FusedKernel) -> f64 {
        cycles_for(kernel, self) / self.freq_hz as f64
    }

    /// Cost-model latency rounded to whole nanoseconds.
    pub fn latency_ns(&self, kernel: &FusedKernel) -> u64 {
        (cycles_for(kernel, self) * 1e9 / self.freq_hz as f64).round() as u64
    }

    /// Core summary in the `M4 @ 64 MHz` style.
    pub fn core_label(&self) -> String {
        let core = match self.core_family {
            CoreFamily::CortexM0Plus => "M0+",
            CoreFamily::CortexM3 => "M3",
            CoreFamily::CortexM4 => "M4",
            CoreFamily::CortexM7 => "M7",
            CoreFamily::RiscvRv32 => "RISC-V",
            CoreFamily::Xtensa => "ESP32",
        };
        format!("{core} @ {} MHz", self.freq_hz as f64 / 1e6)
    }

    fn validate(&self) -> Result<(), BoardError> {
        let bad = |m: &str| BoardError::Invalid { board: self.name.clone(), message: m.to_string() };
        if self.freq_hz == 0 {
            return Err(bad("freq_hz must be > 0"));
        }
        let c = self.coeffs();
        if ![c.cycles_per_mac, c.cycles_per_element].iter().all(|&x| x > 0.0) {
            return Err(bad("cycle coefficients must be positive"));
        }
        if c.external_flash_penalty.is_nan() || c.external_flash_penalty < 1.0 {
            return Err(bad("external_flash_penalty must be >= 1"));
        }
        Ok(())
    }
}

/// Cycles of `kernel` on `board`.
pub fn cycles_for(kernel: &FusedKernel, board: &BoardSpec) -> f64 {
    board.cycles(kernel.macs, kernel.elements)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoardError {
    #[error("unknown board {name:?}{}", near_list(.near))]
    UnknownBoard { name: String, near: Vec<String> },
    #[error("malformed boards file: {0}")]
    Parse(String),
    #[error("invalid board {board}: {message}")]
    Invalid { board: String, message: String },
    #[error("duplicate board name {0}")]
    Duplicate(String),
}

fn near_list(near: &[String]) -> String {
    if near.is_empty() {
        String::new()
    } else {
        format!("; did you mean {}?", near.join(", "))
    }
}

/// Immutable set of boards, in file order.
#[derive(Debug, Clone)]
pub struct BoardRegistry {
    boards: Vec<BoardSpec>,
}

impl BoardRegistry {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_BOARDS.as_bytes()).expect("built-in boards file is valid")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, BoardError> {
        let boards: Vec<BoardSpec> = serde_json::from_slice(bytes).map_err(|e| BoardError::Parse(e.to_string()))?;
        Self::new(boards)
    }

    pub fn from_path(path: &Path) -> Result<Self, BoardError> {
        let bytes = std::fs::read(path).map_err(|e| BoardError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&bytes)
    }

    pub fn new(boards: Vec<BoardSpec>) -> Result<Self, BoardError> {
        let mut seen = BTreeSet::new();
        for b in &boards {
            b.validate()?;
            if !seen.insert(b.name.as_str()) {
                return Err(BoardError::Duplicate(b.name.clone()));
            }
        }
        Ok(BoardRegistry { boards })
    }

    pub fn boards(&self) -> &[BoardSpec] {
        &self.boards
    }

    pub fn lookup(&self, name: &str) -> Result<&BoardSpec, BoardError> {
        self.boards.iter().find(|b| b.name == name).ok_or_else(|| {
            let mut scored: Vec<(usize, &str)> = self
                .boards
                .iter()
                .map(|b| (edit_distance(name, &b.name), b.name.as_str()))
                .filter(|(d, n)| *d <= 3 || n.contains(name) || (!name.is_empty() && name.contains(*n)))
                .collect();
            scored.sort();
            BoardError::UnknownBoard {
                name: name.to_string(),
                near: scored.into_iter().take(3).map(|(_, n)| n.to_string()).collect(),
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.boards).expect("boards serialize")
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(ca != cb)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(macs: u64, elements: u64) -> FusedKernel {
        FusedKernel {
            name: "k".into(),
            members: vec![],
            member_ids: vec![],
            assoc_params: vec![],
            macs,
            elements,
            inputs: vec![],
            output: String::new(),
            internal: vec![],
            prologue: 0,
            workspace_bytes: 0,
        }
    }

    #[test]
    fn registry_has_the_roster() {
        let r = BoardRegistry::builtin();
        assert_eq!(r.boards().len(), 17);
        let f7 = r.lookup("stm32f746g-disco").unwrap();
        assert_eq!(f7.core_family, CoreFamily::CortexM7);
        assert_eq!(f7.freq_hz, 216_000_000);
        assert_eq!(f7.core_label(), "M7 @ 216 MHz");
        let hifive = r.lookup("hifive1b").unwrap();
        assert_eq!(hifive.core_family, CoreFamily::RiscvRv32);
        assert_eq!(hifive.freq_hz, 320_000_000);
        assert!(hifive.external_flash && !hifive.cache_enabled);
        assert_eq!(hifive.flash_penalty(), 12.0);
        assert!(r.boards().iter().all(|b| b.price_usd.is_none()));
    }

    #[test]
    fn unknown_board_suggests() {
        let r = BoardRegistry::builtin();
        match r.lookup("no-such-board") {
            Err(BoardError::UnknownBoard { name, .. }) => assert_eq!(name, "no-such-board"),
            other => panic!("{other:?}"),
        }
        match r.lookup("nrf52-dk") {
            Err(BoardError::UnknownBoard { near, .. }) => assert_eq!(near[0], "nrf52dk"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn registry_rejects_duplicates_and_zero_freq() {
        let r = BoardRegistry::builtin();
        let mut boards = r.boards().to_vec();
        boards.push(boards[0].clone());
        assert!(matches!(BoardRegistry::new(boards), Err(BoardError::Duplicate(_))));
        let mut b = r.boards()[0].clone();
        b.freq_hz = 0;
        assert!(matches!(BoardRegistry::new(vec![b]), Err(BoardError::Invalid { .. })));
    }

    #[test]
    fn zero_work_zero_cycles() {
        let r = BoardRegistry::builtin();
        assert_eq!(cycles_for(&kernel(0, 0), r.lookup("nrf52dk").unwrap()), 0.0);
    }

    #[test]
    fn inverse_frequency() {
        let r = BoardRegistry::builtin();
        let k = kernel(123_456, 789);
        let slow = r.lookup("b-l072z-lrwan1").unwrap();
        let fast = r.lookup("samr21-xpro").unwrap();
        assert_eq!(slow.latency_s(&k) / fast.latency_s(&k), 1.5);
    }

    #[test]
    fn m0plus_vs_m4_ratio() {
        let r = BoardRegistry::builtin();
        // LeNet-sized workload dominated by MACs
        let k = kernel(280_000, 12_000);
        let m0 = r.lookup("samr21-xpro").unwrap().latency_s(&k);
        let m4 = r.lookup("nucleo-wl55jc").unwrap().latency_s(&k);
        let ratio = m0 / m4;
        assert!((ratio - 1.845).abs() / 1.845 < 0.10, "ratio {ratio}");
    }

    #[test]
    fn flash_penalty_matches_derived_ratio() {
        let r = BoardRegistry::builtin();
        let k = kernel(280_000, 12_000);
        let h = r.lookup("hifive1b").unwrap();
        let s = r.lookup("sipeed-longan-nano").unwrap();
        let per_cycle = (h.latency_s(&k) * h.freq_hz as f64) / (s.latency_s(&k) * s.freq_hz as f64);
        let measured = (153.747 * 320.0) / (37.789 * 108.0);
        assert!((per_cycle - measured).abs() / measured < 0.05, "{per_cycle} vs {measured}");
        assert!(h.latency_s(&k) > s.latency_s(&k));
    }

    #[test]
    fn registry_json_round_trip() {
        let r = BoardRegistry::builtin();
        let back = BoardRegistry::from_json(r.to_json().as_bytes()).unwrap();
        assert_eq!(back.boards(), r.boards());
    }
}
