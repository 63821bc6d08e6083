use std::collections::HashSet;

use super::{DType, ModelError, ModelGraph, OpKind, TensorKind};

pub(super) fn validate(g: &ModelGraph) -> Result<(), ModelError> {
    check_tensors(g)?;
    check_nodes(g)?;
    check_params(g)?;
    Ok(())
}

fn check_tensors(g: &ModelGraph) -> Result<(), ModelError> {
    let mut saw_input = false;
    let mut saw_output = false;
    for t in g.tensors() {
        let entity = || format!("tensor {}", t.id);
        if t.id.is_empty() {
            return Err(ModelError::validation("tensor <empty>", "empty tensor id"));
        }
        if t.shape.contains(&0) {
            return Err(ModelError::validation(entity(), "shape dimensions must be >= 1"));
        }
        let needs_shape = matches!(t.kind, TensorKind::Input | TensorKind::Param);
        if needs_shape && !t.has_shape() {
            return Err(ModelError::validation(entity(), "input and param tensors need a shape"));
        }
        match (t.dtype, t.quant) {
            (DType::Fp32, Some(_)) => {
                return Err(ModelError::validation(entity(), "fp32 tensors carry no quantization"));
            }
            (DType::Int8 | DType::Int32, None) => {
                return Err(ModelError::validation(entity(), "integer tensors require scale and zero_point"));
            }
            (DType::Int8 | DType::Int32, Some(q)) => {
                if !(q.scale.is_finite() && q.scale > 0.0) {
                    return Err(ModelError::validation(entity(), "scale must be a positive real"));
                }
                if !(-128..=127).contains(&q.zero_point) {
                    return Err(ModelError::validation(entity(), "zero_point outside [-128, 127]"));
                }
            }
            (DType::Fp32, None) => {}
        }
        match t.kind {
            TensorKind::Input => saw_input = true,
            TensorKind::Output => saw_output = true,
            _ => {}
        }
        if matches!(t.kind, TensorKind::Input | TensorKind::Output) && t.dtype != DType::Fp32 {
            return Err(ModelError::validation(entity(), "graph inputs and outputs must be fp32"));
        }
    }
    if !saw_input {
        return Err(ModelError::validation(format!("graph {}", g.name()), "no input tensor"));
    }
    if !saw_output {
        return Err(ModelError::validation(format!("graph {}", g.name()), "no output tensor"));
    }
    Ok(())
}

fn check_nodes(g: &ModelGraph) -> Result<(), ModelError> {
    let mut node_ids = HashSet::new();
    // Tensors whose value is available at the current point of the stated order.
    let mut available: HashSet<&str> = g
        .tensors()
        .iter()
        .filter(|t| matches!(t.kind, TensorKind::Input | TensorKind::Param))
        .map(|t| t.id.as_str())
        .collect();
    let mut produced: HashSet<&str> = HashSet::new();

    for node in g.nodes() {
        let entity = || format!("node {}", node.id);
        if !node_ids.insert(node.id.as_str()) {
            return Err(ModelError::validation(entity(), "duplicate node id"));
        }
        let (n_in, n_out) = node.kind.arity();
        if node.inputs.len() != n_in || node.outputs.len() != n_out {
            return Err(ModelError::validation(
                entity(),
                format!(
                    "{} expects {n_in} input(s) and {n_out} output(s), got {} and {}",
                    node.kind,
                    node.inputs.len(),
                    node.outputs.len()
                ),
            ));
        }
        for id in node.inputs.iter().chain(&node.outputs) {
            if g.tensor(id).is_none() {
                return Err(ModelError::validation(entity(), format!("unknown tensor id {id}")));
            }
        }
        for id in &node.inputs {
            if !available.contains(id.as_str()) {
                let reason = if g.producer(id).is_some() {
                    format!("input {id} is produced later; node order is not topological")
                } else {
                    format!("input {id} is never produced")
                };
                return Err(ModelError::validation(entity(), reason));
            }
        }
        for id in &node.outputs {
            let t = g.tensor(id).expect("checked above");
            if matches!(t.kind, TensorKind::Input | TensorKind::Param) {
                return Err(ModelError::validation(entity(), format!("writes to {} tensor {id}", kind_name(t.kind))));
            }
            if !produced.insert(id.as_str()) {
                return Err(ModelError::validation(entity(), format!("tensor {id} produced more than once")));
            }
            available.insert(id.as_str());
        }
        check_node_types(g, node)?;
        check_attrs(node)?;
    }

    for t in g.tensors() {
        if matches!(t.kind, TensorKind::Intermediate | TensorKind::Output) && !produced.contains(t.id.as_str()) {
            return Err(ModelError::validation(format!("tensor {}", t.id), "never produced by any node"));
        }
    }
    Ok(())
}

fn kind_name(k: TensorKind) -> &'static str {
    match k {
        TensorKind::Input => "input",
        TensorKind::Output => "output",
        TensorKind::Param => "param",
        TensorKind::Intermediate => "intermediate",
    }
}

fn check_node_types(g: &ModelGraph, node: &super::OperatorNode) -> Result<(), ModelError> {
    let dt = |id: &String| g.tensor(id).expect("checked").dtype;
    let ins: Vec<DType> = node.inputs.iter().map(dt).collect();
    let out = dt(&node.outputs[0]);
    let bad = |msg: String| Err(ModelError::validation(format!("node {}", node.id), msg));
    match node.kind {
        OpKind::Quantize => {
            if ins[0] != DType::Fp32 || !out.is_integer() {
                return bad(format!("quantize maps fp32 to an integer type, got {} -> {out}", ins[0]));
            }
        }
        OpKind::Dequantize => {
            if !ins[0].is_integer() || out != DType::Fp32 {
                return bad(format!("dequantize maps an integer type to fp32, got {} -> {out}", ins[0]));
            }
        }
        OpKind::Dense | OpKind::Conv2d => {
            let fp = ins.iter().all(|&d| d == DType::Fp32) && out == DType::Fp32;
            let q = ins.iter().all(|&d| d == DType::Int8) && out.is_integer();
            if !(fp || q) {
                return bad(format!(
                    "{} needs int8 operands with an integer output or all-fp32, got {:?} -> {out}",
                    node.kind, ins
                ));
            }
        }
        OpKind::Add => {
            let fp = ins.iter().all(|&d| d == DType::Fp32) && out == DType::Fp32;
            let q = ins.iter().all(|d| d.is_integer()) && out.is_integer();
            if !(fp || q) {
                return bad(format!("add operands must be all-integer or all-fp32, got {:?} -> {out}", ins));
            }
        }
        OpKind::Reshape => {
            if ins[0] != out {
                return bad(format!("reshape cannot change dtype ({} -> {out})", ins[0]));
            }
            if out.is_integer() {
                let qi = g.tensor(&node.inputs[0]).and_then(|t| t.quant);
                let qo = g.tensor(&node.outputs[0]).and_then(|t| t.quant);
                if qi != qo {
                    return bad("reshape cannot change quantization parameters".into());
                }
            }
        }
        OpKind::Relu | OpKind::Maxpool2d | OpKind::Avgpool2d | OpKind::Softmax => {
            if ins[0].is_integer() != out.is_integer() {
                return bad(format!("{} cannot mix fp32 and integer ({} -> {out})", node.kind, ins[0]));
            }
        }
    }
    Ok(())
}

fn check_attrs(node: &super::OperatorNode) -> Result<(), ModelError> {
    let entity = || format!("node {}", node.id);
    let a = &node.attrs;
    let positive = |v: Option<[usize; 2]>| v.is_none_or(|[x, y]| x >= 1 && y >= 1);
    if !positive(a.kernel) || !positive(a.stride) {
        return Err(ModelError::validation(entity(), "kernel and stride must be >= 1"));
    }
    match node.kind {
        OpKind::Maxpool2d | OpKind::Avgpool2d if a.kernel.is_none() => {
            Err(ModelError::validation(entity(), "pooling requires attrs.kernel"))
        }
        OpKind::Reshape => match &a.shape {
            None => Err(ModelError::validation(entity(), "reshape requires attrs.shape")),
            Some(s) if s.is_empty() || s.contains(&0) => {
                Err(ModelError::validation(entity(), "reshape target dimensions must be >= 1"))
            }
            Some(_) => Ok(()),
        },
        _ => Ok(()),
    }
}

fn check_params(g: &ModelGraph) -> Result<(), ModelError> {
    for p in g.params() {
        let t = g.tensor(&p.tensor).expect("param names come from the tensor table");
        if p.data.len() != t.byte_size() {
            return Err(ModelError::validation(
                format!("param {} ({})", p.tensor, p.name),
                format!("blob is {} bytes, tensor needs {}", p.data.len(), t.byte_size()),
            ));
        }
    }
    Ok(())
}
