//! Static activation arena planning.
//!
//! Every activation crossing a kernel boundary (graph inputs and outputs
//! included) and every kernel workspace becomes a [`Block`] with an
//! inclusive live range in kernel-index steps. Blocks are placed
//! lowest-offset first-fit. For small plans every placement order is
//! searched (branch and bound), which reaches the optimum because some
//! first-fit order reproduces any compacted optimal packing; larger plans
//! take the best of a few fixed orders, execution order first.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{align8, FusedKernel};
use crate::model_ir::{ModelGraph, TensorKind};

/// Plans with at most this many blocks are packed exhaustively.
pub const EXACT_BLOCK_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub birth: usize,
    pub death: usize,
    /// Size in bytes, already 8-byte aligned.
    pub size: u64,
}

impl Block {
    pub fn overlaps_in_time(&self, other: &Block) -> bool {
        self.birth <= other.death && other.birth <= self.death
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryPlan {
    /// Activation tensor id -> byte offset in the arena.
    pub offsets: BTreeMap<String, u64>,
    /// Workspace offset per kernel (0 when the kernel needs none).
    pub workspace_offsets: Vec<u64>,
    pub arena_bytes: u64,
    pub runtime_overhead_bytes: u64,
    pub total_memory_bytes: u64,
}

/// Lowest offset at which `b` fits next to the already `placed` blocks.
fn first_fit(blocks: &[Block], placed: &[(usize, u64)], b: &Block) -> u64 {
    let mut candidates: Vec<u64> = Vec::with_capacity(placed.len() + 1);
    candidates.push(0);
    for &(j, off) in placed {
        if blocks[j].overlaps_in_time(b) {
            candidates.push(off + blocks[j].size);
        }
    }
    candidates.sort_unstable();
    candidates
        .into_iter()
        .find(|&c| {
            placed.iter().all(|&(j, off)| {
                let o = &blocks[j];
                !o.overlaps_in_time(b) || c + b.size <= off || off + o.size <= c
            })
        })
        .expect("the top of the highest conflicting block always fits")
}

/// First-fit in the given order; returns offsets indexed like `blocks`.
pub fn place_in_order(blocks: &[Block], order: &[usize]) -> (Vec<u64>, u64) {
    let mut placed: Vec<(usize, u64)> = Vec::with_capacity(blocks.len());
    let mut arena = 0;
    for &i in order {
        let off = first_fit(blocks, &placed, &blocks[i]);
        arena = arena.max(off + blocks[i].size);
        placed.push((i, off));
    }
    let mut offsets = vec![0; blocks.len()];
    for (i, off) in placed {
        offsets[i] = off;
    }
    (offsets, arena)
}

/// Packs `blocks` into a single arena, returning offsets and arena size.
pub fn pack_blocks(blocks: &[Block]) -> (Vec<u64>, u64) {
    let n = blocks.len();
    let execution: Vec<usize> = {
        let mut v: Vec<usize> = (0..n).collect();
        v.sort_by_key(|&i| (blocks[i].birth, blocks[i].death));
        v
    };
    let mut best = place_in_order(blocks, &execution);

    let by_size = {
        let mut v: Vec<usize> = (0..n).collect();
        v.sort_by_key(|&i| (std::cmp::Reverse(blocks[i].size), blocks[i].birth));
        v
    };
    let by_lifetime = {
        let mut v: Vec<usize> = (0..n).collect();
        v.sort_by_key(|&i| (std::cmp::Reverse(blocks[i].death - blocks[i].birth), std::cmp::Reverse(blocks[i].size)));
        v
    };
    for order in [by_size, by_lifetime] {
        let cand = place_in_order(blocks, &order);
        if cand.1 < best.1 {
            best = cand;
        }
    }

    if n <= EXACT_BLOCK_LIMIT && best.1 > liveness_lower_bound(blocks) {
        let mut search = Search {
            blocks,
            lower: liveness_lower_bound(blocks),
            best_arena: best.1,
            best_placed: None,
            placed: Vec::with_capacity(n),
            used: vec![false; n],
        };
        search.run(0);
        if let Some(placed) = search.best_placed {
            let mut offsets = vec![0; n];
            for (i, off) in placed {
                offsets[i] = off;
            }
            best = (offsets, search.best_arena);
        }
    }
    best
}

struct Search<'a> {
    blocks: &'a [Block],
    lower: u64,
    best_arena: u64,
    best_placed: Option<Vec<(usize, u64)>>,
    placed: Vec<(usize, u64)>,
    used: Vec<bool>,
}

impl Search<'_> {
    fn run(&mut self, height: u64) {
        if self.best_arena == self.lower {
            return;
        }
        if self.placed.len() == self.blocks.len() {
            if height < self.best_arena {
                self.best_arena = height;
                self.best_placed = Some(self.placed.clone());
            }
            return;
        }
        for i in 0..self.blocks.len() {
            if self.used[i] {
                continue;
            }
            let b = self.blocks[i];
            let off = first_fit(self.blocks, &self.placed, &b);
            let h = height.max(off + b.size);
            if h >= self.best_arena {
                continue;
            }
            self.used[i] = true;
            self.placed.push((i, off));
            self.run(h);
            self.placed.pop();
            self.used[i] = false;
        }
    }
}

/// Peak total size of simultaneously live blocks.
pub fn liveness_lower_bound(blocks: &[Block]) -> u64 {
    let last = blocks.iter().map(|b| b.death).max().unwrap_or(0);
    (0..=last)
        .map(|t| blocks.iter().filter(|b| b.birth <= t && t <= b.death).map(|b| b.size).sum::<u64>())
        .max()
        .unwrap_or(0)
}

/// True when no two time-overlapping blocks share arena bytes.
pub fn is_valid_packing(blocks: &[Block], offsets: &[u64]) -> bool {
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            let (a, b) = (&blocks[i], &blocks[j]);
            let disjoint = offsets[i] + a.size <= offsets[j] || offsets[j] + b.size <= offsets[i];
            if a.overlaps_in_time(b) && !disjoint {
                return false;
            }
        }
    }
    true
}

/// What a [`Block`] stands for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockOwner {
    Tensor(String),
    Workspace(usize),
}

/// Liveness blocks of a kernel sequence, in a deterministic order.
pub fn blocks_for(graph: &ModelGraph, kernels: &[FusedKernel]) -> Vec<(BlockOwner, Block)> {
    let last = kernels.len().saturating_sub(1);
    let mut out: Vec<(BlockOwner, Block)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();

    let mut touch = |id: &str, k: usize, out: &mut Vec<(BlockOwner, Block)>| {
        if let Some(&i) = index.get(id) {
            let b = &mut out[i].1;
            b.birth = b.birth.min(k);
            b.death = b.death.max(k);
        } else {
            let t = graph.tensor(id).expect("validated");
            index.insert(id.to_string(), out.len());
            out.push((
                BlockOwner::Tensor(id.to_string()),
                Block { birth: k, death: k, size: align8(t.byte_size() as u64) },
            ));
        }
    };

    for t in graph.inputs() {
        touch(&t.id, 0, &mut out);
    }
    for (k, kernel) in kernels.iter().enumerate() {
        for input in &kernel.inputs {
            touch(input, k, &mut out);
        }
        touch(&kernel.output, k, &mut out);
        if kernel.workspace_bytes > 0 {
            out.push((BlockOwner::Workspace(k), Block { birth: k, death: k, size: kernel.workspace_bytes }));
        }
    }
    for t in graph.outputs() {
        touch(&t.id, last, &mut out);
    }
    // graph inputs are written before the first kernel runs
    for (owner, b) in out.iter_mut() {
        if let BlockOwner::Tensor(id) = owner {
            if graph.tensor(id).map(|t| t.kind) == Some(TensorKind::Input) {
                b.birth = 0;
            }
        }
    }
    out
}

pub fn plan_memory(graph: &ModelGraph, kernels: &[FusedKernel], runtime_overhead_bytes: u64) -> MemoryPlan {
    let owned = blocks_for(graph, kernels);
    let blocks: Vec<Block> = owned.iter().map(|(_, b)| *b).collect();
    let (offsets, arena_bytes) = pack_blocks(&blocks);
    let mut plan = MemoryPlan {
        offsets: BTreeMap::new(),
        workspace_offsets: vec![0; kernels.len()],
        arena_bytes,
        runtime_overhead_bytes,
        total_memory_bytes: arena_bytes + runtime_overhead_bytes,
    };
    for ((owner, _), off) in owned.into_iter().zip(offsets) {
        match owner {
            BlockOwner::Tensor(id) => {
                plan.offsets.insert(id, off);
            }
            BlockOwner::Workspace(k) => plan.workspace_offsets[k] = off,
        }
    }
    plan
}
