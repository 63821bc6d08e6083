//! Rule-based operator fusion.
//!
//! Patterns, tried longest first from each unassigned node in graph order:
//! `dense+add+relu`, `dense+add`, `conv2d+add+relu`, `conv2d+add`, and any
//! op alone. A chain only extends through a tensor with exactly one
//! consumer that is not a graph output. Boundary `quantize`
//! (graph input -> single consumer) and `dequantize` (sole consumer of a
//! kernel output, writing a graph output) fold into the adjacent kernel as
//! prologue/epilogue without contributing to its name.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model_ir::{op_cost, ModelGraph, OpKind, TensorKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedKernel {
    pub name: String,
    /// Original node indices in execution order.
    pub members: Vec<usize>,
    /// Original node ids, parallel to `members`.
    pub member_ids: Vec<String>,
    pub assoc_params: Vec<String>,
    pub macs: u64,
    pub elements: u64,
    /// Kernel inputs (activations only), in first-use order.
    pub inputs: Vec<String>,
    /// Tensor produced by the kernel.
    pub output: String,
    /// Tensors produced and consumed entirely inside the kernel.
    pub internal: Vec<String>,
    /// Leading members (folded boundary quantize) whose outputs are
    /// materialized in the kernel workspace. The member after them is the
    /// head; the rest stream per output element and need no scratch.
    pub prologue: usize,
    /// Scratch bytes for prologue outputs, each 8-byte aligned.
    pub workspace_bytes: u64,
}

pub const KERNEL_PREFIX: &str = "tvmgen_default_";

/// Greedy fusion of `graph` (shapes must be inferred).
pub fn fuse_operators(graph: &ModelGraph) -> Vec<FusedKernel> {
    let groups = greedy_groups(graph);
    groups_to_kernels(graph, &groups)
}

/// One kernel per node, in node order; no prologue/epilogue folding.
pub fn unfused(graph: &ModelGraph) -> Vec<FusedKernel> {
    let groups: Vec<Group> = (0..graph.nodes().len()).map(|i| Group { members: vec![i], named: vec![i] }).collect();
    groups_to_kernels(graph, &groups)
}

#[derive(Debug, Clone)]
struct Group {
    members: Vec<usize>,
    /// Members contributing to the kernel name.
    named: Vec<usize>,
}

fn single_consumer(graph: &ModelGraph, tensor: &str) -> Option<usize> {
    let t = graph.tensor(tensor)?;
    if t.kind == TensorKind::Output {
        return None;
    }
    match graph.consumers(tensor).as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}

fn greedy_groups(graph: &ModelGraph) -> Vec<Group> {
    let nodes = graph.nodes();
    let mut assigned = vec![false; nodes.len()];
    let mut groups: Vec<Group> = Vec::new();
    // Tensors available before the group being formed starts.
    let mut ready: Vec<bool> = nodes.iter().map(|_| false).collect();
    let available_before = |tensor: &str, ready: &[bool]| -> bool {
        match graph.producer(tensor) {
            None => true,
            Some(p) => ready[p],
        }
    };

    for start in 0..nodes.len() {
        if assigned[start] {
            continue;
        }
        let mut chain = vec![start];
        let head = nodes[start].kind;
        if head.is_mac() {
            // dense/conv2d -> add [-> relu]
            if let Some(add) = single_consumer(graph, &nodes[start].outputs[0]) {
                let add_node = &nodes[add];
                let other_ready = add_node
                    .inputs
                    .iter()
                    .filter(|i| **i != nodes[start].outputs[0])
                    .all(|i| available_before(i, &ready));
                let same_twice = add_node.inputs.iter().all(|i| *i == nodes[start].outputs[0]);
                let same_shape = graph.tensor(&add_node.outputs[0]).map(|t| &t.shape)
                    == graph.tensor(&nodes[start].outputs[0]).map(|t| &t.shape);
                if add_node.kind == OpKind::Add && !assigned[add] && other_ready && !same_twice && same_shape {
                    chain.push(add);
                    if let Some(relu) = single_consumer(graph, &add_node.outputs[0]) {
                        if nodes[relu].kind == OpKind::Relu && !assigned[relu] {
                            chain.push(relu);
                        }
                    }
                }
            }
        }
        for &m in &chain {
            assigned[m] = true;
        }
        let named = chain.clone();
        let mut members = chain;

        // Boundary quantize prologue: a group consisting only of a boundary
        // quantize is merged into the group of its consumer below.
        let head = members[0];
        if let Some(prev) = groups.pop_if(|prev| {
            is_boundary_quantize(graph, prev)
                && single_consumer(graph, &nodes[prev.members[0]].outputs[0]) == Some(head)
        }) {
            members.splice(0..0, prev.members);
        }
        for &m in &members {
            ready[m] = true;
        }

        // Boundary dequantize epilogue.
        let last_out = &nodes[*members.last().expect("non-empty")].outputs[0];
        if let Some(dq) = single_consumer(graph, last_out) {
            let n = &nodes[dq];
            let is_boundary =
                n.kind == OpKind::Dequantize && graph.tensor(&n.outputs[0]).map(|t| t.kind) == Some(TensorKind::Output);
            if is_boundary && !assigned[dq] && !named.is_empty() && nodes[named[0]].kind != OpKind::Dequantize {
                assigned[dq] = true;
                ready[dq] = true;
                members.push(dq);
            }
        }
        groups.push(Group { members, named });
    }
    groups
}

fn is_boundary_quantize(graph: &ModelGraph, g: &Group) -> bool {
    if g.members.len() != 1 {
        return false;
    }
    let n = &graph.nodes()[g.members[0]];
    n.kind == OpKind::Quantize
        && graph.tensor(&n.inputs[0]).map(|t| t.kind) == Some(TensorKind::Input)
        && single_consumer(graph, &n.outputs[0]).is_some()
}

fn groups_to_kernels(graph: &ModelGraph, groups: &[Group]) -> Vec<FusedKernel> {
    let nodes = graph.nodes();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut kernels = Vec::with_capacity(groups.len());
    for g in groups {
        let base = format!("fused_{}", g.named.iter().map(|&i| nodes[i].kind.tag()).collect::<Vec<_>>().join("_"));
        let count = seen.entry(base.clone()).or_insert(0);
        let name = if *count == 0 { base } else { format!("{base}_{count}") };
        *count += 1;

        let mut assoc_params = Vec::new();
        let mut inputs: Vec<String> = Vec::new();
        let mut produced: Vec<&str> = Vec::new();
        let mut cost = crate::model_ir::OpCost::default();
        for &m in &g.members {
            let node = &nodes[m];
            for inp in &node.inputs {
                let t = graph.tensor(inp).expect("validated");
                if t.kind == TensorKind::Param {
                    let pname = &graph.param(inp).expect("param blob").name;
                    if !assoc_params.contains(pname) {
                        assoc_params.push(pname.clone());
                    }
                } else if !produced.contains(&inp.as_str()) && !inputs.contains(inp) {
                    inputs.push(inp.clone());
                }
            }
            produced.push(&node.outputs[0]);
            cost = cost + op_cost(node, graph);
        }
        let output = nodes[*g.members.last().expect("non-empty")].outputs[0].clone();
        let internal: Vec<String> = produced.iter().filter(|t| **t != output).map(|t| t.to_string()).collect();
        let prologue = g.members.iter().position(|&m| m == g.named[0]).expect("named members are members");
        let workspace_bytes = g.members[..prologue]
            .iter()
            .map(|&m| super::align8(graph.tensor(&nodes[m].outputs[0]).expect("validated").byte_size() as u64))
            .sum();
        kernels.push(FusedKernel {
            name,
            members: g.members.clone(),
            member_ids: g.members.iter().map(|&m| nodes[m].id.clone()).collect(),
            assoc_params,
            macs: cost.macs,
            elements: cost.elements,
            inputs,
            output,
            internal,
            prologue,
            workspace_bytes,
        });
    }
    kernels
}
