//! Inference cost evaluation for low-power device targets: a small model IR,
//! a fusing compiler with a static memory planner, a framed RPC protocol, a
//! simulated device worker, a board cost model, report statistics and the
//! host-side orchestration tying them together.

pub mod analyzer;
pub mod boards;
pub mod compiler;
pub mod model_ir;
pub mod orchestrator;
pub mod rpc;
pub mod worker;

pub use analyzer::{PerModelReport, PerOpReport};
pub use boards::{BoardRegistry, BoardSpec, CoreFamily};
pub use compiler::{compile_artifact, CompileConfig, DeployableModel, FusedKernel, MemoryPlan};
pub use model_ir::{load_model, save_model, ModelGraph, OpKind, TensorSpec};
pub use rpc::Message;
