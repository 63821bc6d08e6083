//! Graph compilation: fusion, static memory planning, storage estimation
//! and the deployable artifact shipped to a worker.

mod fusion;
mod memory;

use std::io::{Cursor, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fusion::{fuse_operators, unfused, FusedKernel, KERNEL_PREFIX};
pub use memory::{
    blocks_for, is_valid_packing, liveness_lower_bound, pack_blocks, place_in_order, plan_memory, Block, BlockOwner,
    MemoryPlan, EXACT_BLOCK_LIMIT,
};

use crate::boards::BoardSpec;
use crate::model_ir::{infer_shapes, load_structure, save_structure, ModelError, ModelGraph, OpKind};

pub fn align8(n: u64) -> u64 {
    n.div_ceil(8) * 8
}

/// Compilation constants; overridable from a JSON configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompileConfig {
    pub code_bytes_per_kernel: u64,
    pub runtime_code_bytes: u64,
    pub runtime_overhead_bytes: u64,
    /// Fuse operators (off compiles one kernel per node).
    pub fuse: bool,
}

impl Default for CompileConfig {
    fn default() -> Self {
        CompileConfig {
            code_bytes_per_kernel: 512,
            runtime_code_bytes: 55_000,
            runtime_overhead_bytes: 4096,
            fuse: true,
        }
    }
}

impl CompileConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, CompileError> {
        serde_json::from_slice(bytes).map_err(|e| CompileError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageEstimate {
    pub per_kernel: Vec<u64>,
    pub runtime_code_bytes: u64,
    pub total: u64,
}

/// Flash footprint: parameter blobs plus code per kernel and the runtime.
pub fn estimate_storage(graph: &ModelGraph, kernels: &[FusedKernel], config: &CompileConfig) -> StorageEstimate {
    let per_kernel: Vec<u64> = kernels
        .iter()
        .map(|k| {
            let params: u64 =
                graph.params().iter().filter(|p| k.assoc_params.contains(&p.name)).map(|p| p.data.len() as u64).sum();
            params + config.code_bytes_per_kernel
        })
        .collect();
    let total = per_kernel.iter().sum::<u64>() + config.runtime_code_bytes;
    StorageEstimate { per_kernel, runtime_code_bytes: config.runtime_code_bytes, total }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resource {
    Ram,
    Flash,
}

impl std::fmt::Display for Resource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Resource::Ram => "RAM",
            Resource::Flash => "flash",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{board}: {resource} exceeded by {} bytes (needs {required}, has {available})", .required - .available)]
    CapacityExceeded { board: String, resource: Resource, required: u64, available: u64 },
    #[error("node {node}: worst-case accumulator {bound} does not fit in 32 bits")]
    AccumulatorOverflow { node: String, bound: u64 },
    #[error("malformed deployable model: {0}")]
    Malformed(String),
    #[error("invalid compile configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardMeta {
    pub name: String,
    pub ram_bytes: u64,
    pub flash_bytes: u64,
}

/// A compiled model ready to be shipped to a worker.
#[derive(Debug, Clone, PartialEq)]
pub struct DeployableModel {
    pub board: BoardMeta,
    pub graph: ModelGraph,
    pub kernels: Vec<FusedKernel>,
    pub plan: MemoryPlan,
    pub storage: StorageEstimate,
    /// Output plus workspace bytes per kernel.
    pub kernel_memory: Vec<u64>,
    pub config: CompileConfig,
}

#[derive(Serialize, Deserialize)]
struct Body {
    kernels: Vec<FusedKernel>,
    plan: MemoryPlan,
    storage: StorageEstimate,
    kernel_memory: Vec<u64>,
    config: CompileConfig,
}

const MAGIC: &[u8; 4] = b"UTDM";
const FORMAT_VERSION: u8 = 1;

impl DeployableModel {
    pub fn memory_bytes(&self) -> u64 {
        self.plan.total_memory_bytes
    }

    pub fn storage_bytes(&self) -> u64 {
        self.storage.total
    }

    /// Binary deployment form: magic, version, then length-prefixed
    /// sections (board, body, graph structure) and the raw param blobs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        let section = |out: &mut Vec<u8>, bytes: &[u8]| {
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(bytes);
        };
        section(&mut out, &serde_json::to_vec(&self.board).expect("serializable"));
        let body = Body {
            kernels: self.kernels.clone(),
            plan: self.plan.clone(),
            storage: self.storage.clone(),
            kernel_memory: self.kernel_memory.clone(),
            config: self.config,
        };
        section(&mut out, &serde_json::to_vec(&body).expect("serializable"));
        section(&mut out, &save_structure(&self.graph));
        out.extend_from_slice(&(self.graph.params().len() as u32).to_le_bytes());
        for p in self.graph.params() {
            section(&mut out, p.tensor.as_bytes());
            section(&mut out, &p.data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CompileError> {
        let bad = |m: &str| CompileError::Malformed(m.to_string());
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 5];
        cur.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic[..4] != MAGIC || magic[4] != FORMAT_VERSION {
            return Err(bad("bad magic or version"));
        }
        let read_u32 = |cur: &mut Cursor<&[u8]>| -> Result<u32, CompileError> {
            let mut b = [0u8; 4];
            cur.read_exact(&mut b).map_err(|_| CompileError::Malformed("truncated length".into()))?;
            Ok(u32::from_le_bytes(b))
        };
        let section = |cur: &mut Cursor<&[u8]>| -> Result<Vec<u8>, CompileError> {
            let len = read_u32(cur)? as usize;
            let remaining = bytes.len() - cur.position() as usize;
            if len > remaining {
                return Err(CompileError::Malformed("section runs past the end".into()));
            }
            let mut v = vec![0u8; len];
            cur.read_exact(&mut v).map_err(|_| CompileError::Malformed("truncated section".into()))?;
            Ok(v)
        };
        let board: BoardMeta =
            serde_json::from_slice(&section(&mut cur)?).map_err(|e| CompileError::Malformed(e.to_string()))?;
        let body: Body =
            serde_json::from_slice(&section(&mut cur)?).map_err(|e| CompileError::Malformed(e.to_string()))?;
        let structure = section(&mut cur)?;
        let n = read_u32(&mut cur)? as usize;
        let mut params = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let id = String::from_utf8(section(&mut cur)?).map_err(|_| bad("param id is not UTF-8"))?;
            params.push((id, section(&mut cur)?));
        }
        if (cur.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let graph = infer_shapes(&load_structure(&structure, params)?)?;
        let model = DeployableModel {
            board,
            graph,
            kernels: body.kernels,
            plan: body.plan,
            storage: body.storage,
            kernel_memory: body.kernel_memory,
            config: body.config,
        };
        model.check_layout()?;
        Ok(model)
    }

    /// Structural consistency of kernels and memory plan against the graph,
    /// so execution can index the arena without further checks.
    pub fn check_layout(&self) -> Result<(), CompileError> {
        let bad = |m: String| Err(CompileError::Malformed(m));
        let g = &self.graph;
        let n = g.nodes().len();
        let mut covered = vec![false; n];
        if self.plan.workspace_offsets.len() != self.kernels.len()
            || self.kernel_memory.len() != self.kernels.len()
            || self.storage.per_kernel.len() != self.kernels.len()
        {
            return bad("per-kernel tables disagree in length".into());
        }
        let arena = self.plan.arena_bytes;
        let fits = |off: u64, size: u64| off.checked_add(size).is_some_and(|end| end <= arena);
        for (k, kernel) in self.kernels.iter().enumerate() {
            if kernel.members.is_empty() || kernel.prologue >= kernel.members.len() {
                return bad(format!("kernel {k} has no head"));
            }
            for &m in &kernel.members {
                if m >= n || covered[m] {
                    return bad(format!("kernel {k} member {m} invalid or repeated"));
                }
                covered[m] = true;
            }
            if g.nodes()[*kernel.members.last().expect("non-empty")].outputs[0] != kernel.output {
                return bad(format!("kernel {k} output mismatch"));
            }
            for t in kernel.inputs.iter().chain(std::iter::once(&kernel.output)) {
                let Some(spec) = g.tensor(t) else {
                    return bad(format!("kernel {k} references unknown tensor {t}"));
                };
                match self.plan.offsets.get(t) {
                    Some(&off) if fits(off, spec.byte_size() as u64) => {}
                    _ => return bad(format!("tensor {t} has no arena slot")),
                }
            }
            let ws: u64 = kernel.members[..kernel.prologue]
                .iter()
                .map(|&m| align8(g.tensor(&g.nodes()[m].outputs[0]).expect("validated").byte_size() as u64))
                .sum();
            if ws != kernel.workspace_bytes || !fits(self.plan.workspace_offsets[k], ws) {
                return bad(format!("kernel {k} workspace inconsistent"));
            }
        }
        if covered.iter().any(|c| !c) {
            return bad("some nodes belong to no kernel".into());
        }
        for t in g.inputs().chain(g.outputs()) {
            match self.plan.offsets.get(&t.id) {
                Some(&off) if fits(off, t.byte_size() as u64) => {}
                _ => return bad(format!("graph tensor {} has no arena slot", t.id)),
            }
        }
        check_accumulators(g)?;
        Ok(())
    }
}

/// Rejects dense/conv2d nodes whose int8 dot product could overflow i32.
pub fn check_accumulators(graph: &ModelGraph) -> Result<(), CompileError> {
    for node in graph.nodes() {
        if !node.kind.is_mac() {
            continue;
        }
        let w = graph.tensor(&node.inputs[1]).expect("validated");
        if !w.dtype.is_integer() {
            continue;
        }
        let reduce: u64 = match node.kind {
            OpKind::Dense => w.shape[1] as u64,
            _ => w.shape[1..].iter().product::<usize>() as u64,
        };
        // |x - zx| and |w - zw| are each at most 255
        let bound = reduce * 255 * 255;
        if bound > i32::MAX as u64 {
            return Err(CompileError::AccumulatorOverflow { node: node.id.clone(), bound });
        }
    }
    Ok(())
}

/// Fusion, memory planning and storage estimation for `board`.
pub fn compile_artifact(
    graph: &ModelGraph,
    board: &BoardSpec,
    config: &CompileConfig,
) -> Result<DeployableModel, CompileError> {
    let graph = infer_shapes(graph)?;
    check_accumulators(&graph)?;
    let kernels = if config.fuse { fuse_operators(&graph) } else { unfused(&graph) };
    let plan = plan_memory(&graph, &kernels, config.runtime_overhead_bytes);
    let storage = estimate_storage(&graph, &kernels, config);
    let kernel_memory = kernels
        .iter()
        .map(|k| {
            let out = graph.tensor(&k.output).expect("validated").byte_size() as u64;
            align8(out) + k.workspace_bytes
        })
        .collect();
    let model = DeployableModel {
        board: BoardMeta { name: board.name.clone(), ram_bytes: board.ram_bytes, flash_bytes: board.flash_bytes },
        graph,
        kernels,
        plan,
        storage,
        kernel_memory,
        config: *config,
    };
    check_capacity(&model, board)?;
    Ok(model)
}

pub fn check_capacity(model: &DeployableModel, board: &BoardSpec) -> Result<(), CompileError> {
    if model.memory_bytes() > board.ram_bytes {
        return Err(CompileError::CapacityExceeded {
            board: board.name.clone(),
            resource: Resource::Ram,
            required: model.memory_bytes(),
            available: board.ram_bytes,
        });
    }
    if model.storage_bytes() > board.flash_bytes {
        return Err(CompileError::CapacityExceeded {
            board: board.name.clone(),
            resource: Resource::Flash,
            required: model.storage_bytes(),
            available: board.flash_bytes,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boards::BoardRegistry;
    use crate::model_ir::zoo;

    #[test]
    fn storage_breakdown() {
        let g = zoo::sinus();
        let k = fuse_operators(&g);
        let cfg = CompileConfig::default();
        let s = estimate_storage(&g, &k, &cfg);
        // p2: 16x16 int8, p3: 16 int32
        assert_eq!(s.per_kernel[1], 256 + 64 + 512);
        // p0: 16 int8, p1: 16 int32
        assert_eq!(s.per_kernel[0], 16 + 64 + 512);
        assert_eq!(s.total, s.per_kernel.iter().sum::<u64>() + 55_000);

        let relu = zoo::relu4();
        let s = estimate_storage(&relu, &fuse_operators(&relu), &cfg);
        assert_eq!(s.per_kernel, vec![512]);
    }

    #[test]
    fn compile_sinus_for_f746() {
        let r = BoardRegistry::builtin();
        let m =
            compile_artifact(&zoo::sinus(), r.lookup("stm32f746g-disco").unwrap(), &CompileConfig::default()).unwrap();
        assert_eq!(m.kernels.len(), 3);
        assert_eq!(m.board.name, "stm32f746g-disco");
        let back = DeployableModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn tiny_ram_is_rejected() {
        let r = BoardRegistry::builtin();
        let mut b = r.lookup("nrf52dk").unwrap().clone();
        b.ram_bytes = 1024;
        match compile_artifact(&zoo::sinus(), &b, &CompileConfig::default()) {
            Err(CompileError::CapacityExceeded { resource, required, available, .. }) => {
                assert_eq!(resource, Resource::Ram);
                assert_eq!(available, 1024);
                assert!(required > 1024);
            }
            other => panic!("{other:?}"),
        }
        b.ram_bytes = 1 << 20;
        b.flash_bytes = 1000;
        assert!(matches!(
            compile_artifact(&zoo::sinus(), &b, &CompileConfig::default()),
            Err(CompileError::CapacityExceeded { resource: Resource::Flash, .. })
        ));
    }

    #[test]
    fn lenet_footprint() {
        let r = BoardRegistry::builtin();
        let m =
            compile_artifact(&zoo::lenet5(), r.lookup("stm32f746g-disco").unwrap(), &CompileConfig::default()).unwrap();
        assert_eq!(m.kernels.len(), 8);
        // input (3136) + quantized input workspace (784) + conv output (3456)
        assert_eq!(m.plan.arena_bytes, 3136 + 784 + 3456);
        assert_eq!(m.memory_bytes(), 3136 + 784 + 3456 + 4096);
    }

    #[test]
    fn malformed_bytes_are_rejected() {
        let r = BoardRegistry::builtin();
        let m = compile_artifact(&zoo::sinus(), r.lookup("nrf52dk").unwrap(), &CompileConfig::default()).unwrap();
        let bytes = m.to_bytes();
        assert!(DeployableModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(DeployableModel::from_bytes(b"UTDM").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(DeployableModel::from_bytes(&extra).is_err());
    }

    #[test]
    fn config_file_overrides() {
        let c = CompileConfig::from_json(br#"{"code_bytes_per_kernel": 256, "runtime_code_bytes": 1000}"#).unwrap();
        assert_eq!(c.code_bytes_per_kernel, 256);
        assert_eq!(c.runtime_overhead_bytes, 4096);
        assert!(CompileConfig::from_json(br#"{"bogus": 1}"#).is_err());
    }
}
