use super::{ModelError, ModelGraph, OpKind, OperatorNode};

/// Fills every intermediate and output shape by per-kind propagation.
/// Declared shapes are checked against the inferred ones.
pub fn infer_shapes(graph: &ModelGraph) -> Result<ModelGraph, ModelError> {
    let mut shapes: Vec<Vec<usize>> = graph.tensors().iter().map(|t| t.shape.clone()).collect();
    let pos = |id: &str| graph.tensor_position(id).expect("validated graph");

    for node in graph.nodes() {
        let ins: Vec<&[usize]> = node.inputs.iter().map(|i| shapes[pos(i)].as_slice()).collect();
        let out = output_shape(node, &ins)?;
        let slot = &mut shapes[pos(&node.outputs[0])];
        if !slot.is_empty() && *slot != out {
            return Err(mismatch(node, &out, slot));
        }
        *slot = out;
    }
    graph.with_shapes(shapes)
}

fn mismatch(node: &OperatorNode, expected: &[usize], actual: &[usize]) -> ModelError {
    ModelError::ShapeMismatch { node: node.id.clone(), expected: expected.to_vec(), actual: actual.to_vec() }
}

fn window_out(size: usize, pad: usize, kernel: usize, stride: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// True when `b` broadcasts onto `a` under right-aligned numpy rules
/// without growing `a`.
pub fn broadcasts_onto(b: &[usize], a: &[usize]) -> bool {
    b.len() <= a.len() && b.iter().rev().zip(a.iter().rev()).all(|(&bd, &ad)| bd == ad || bd == 1)
}

pub(crate) fn output_shape(node: &OperatorNode, ins: &[&[usize]]) -> Result<Vec<usize>, ModelError> {
    match node.kind {
        OpKind::Dense => {
            let (a, w) = (ins[0], ins[1]);
            if a.len() != 2 || w.len() != 2 {
                return Err(mismatch(node, &[0, 0], if a.len() != 2 { a } else { w }));
            }
            if a[1] != w[1] {
                return Err(mismatch(node, &[w[0], a[1]], w));
            }
            Ok(vec![a[0], w[0]])
        }
        OpKind::Conv2d => {
            let (x, w) = (ins[0], ins[1]);
            if x.len() != 4 || w.len() != 4 {
                return Err(mismatch(node, &[0, 0, 0, 0], if x.len() != 4 { x } else { w }));
            }
            if x[1] != w[1] {
                return Err(mismatch(node, &[w[0], x[1], w[2], w[3]], w));
            }
            if let Some(k) = node.attrs.kernel {
                if k != [w[2], w[3]] {
                    return Err(mismatch(node, &[w[0], w[1], k[0], k[1]], w));
                }
            }
            let [sh, sw] = node.attrs.stride_or_default();
            let [ph, pw] = node.attrs.padding_or_default();
            match (window_out(x[2], ph, w[2], sh), window_out(x[3], pw, w[3], sw)) {
                (Some(h), Some(wd)) => Ok(vec![x[0], w[0], h, wd]),
                _ => Err(mismatch(node, &[x[0], x[1], w[2], w[3]], x)),
            }
        }
        OpKind::Maxpool2d | OpKind::Avgpool2d => {
            let x = ins[0];
            if x.len() != 4 {
                return Err(mismatch(node, &[0, 0, 0, 0], x));
            }
            let [kh, kw] = node.attrs.kernel.expect("validated");
            let [sh, sw] = node.attrs.stride.unwrap_or([kh, kw]);
            let [ph, pw] = node.attrs.padding_or_default();
            match (window_out(x[2], ph, kh, sh), window_out(x[3], pw, kw, sw)) {
                (Some(h), Some(wd)) => Ok(vec![x[0], x[1], h, wd]),
                _ => Err(mismatch(node, &[x[0], x[1], kh, kw], x)),
            }
        }
        OpKind::Add => {
            let (a, b) = (ins[0], ins[1]);
            if !broadcasts_onto(b, a) {
                return Err(mismatch(node, a, b));
            }
            Ok(a.to_vec())
        }
        OpKind::Reshape => {
            let target = node.attrs.shape.clone().expect("validated");
            let n_in: usize = ins[0].iter().product();
            let n_out: usize = target.iter().product();
            if n_in != n_out {
                return Err(mismatch(node, ins[0], &target));
            }
            Ok(target)
        }
        OpKind::Relu | OpKind::Softmax | OpKind::Quantize | OpKind::Dequantize => Ok(ins[0].to_vec()),
    }
}

/// Arithmetic work of one node: multiply-accumulates for dense/conv2d,
/// produced elements for everything else.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCost {
    pub macs: u64,
    pub elements: u64,
}

impl std::ops::Add for OpCost {
    type Output = OpCost;
    fn add(self, o: OpCost) -> OpCost {
        OpCost { macs: self.macs + o.macs, elements: self.elements + o.elements }
    }
}

/// Multiply-accumulate count of `node`. Requires inferred shapes.
pub fn macs_of(node: &OperatorNode, graph: &ModelGraph) -> u64 {
    op_cost(node, graph).macs
}

pub fn op_cost(node: &OperatorNode, graph: &ModelGraph) -> OpCost {
    let shape = |id: &String| graph.tensor(id).expect("validated").shape.as_slice();
    let out = shape(&node.outputs[0]);
    match node.kind {
        OpKind::Dense => {
            let a = shape(&node.inputs[0]);
            OpCost { macs: (a[0] * a[1] * out[1]) as u64, elements: 0 }
        }
        OpKind::Conv2d => {
            let w = shape(&node.inputs[1]);
            // Cout*Cin*Kh*Kw weights visited per output pixel
            let per_pixel = w.iter().product::<usize>();
            OpCost { macs: (per_pixel * out[0] * out[2] * out[3]) as u64, elements: 0 }
        }
        _ => OpCost { macs: 0, elements: out.iter().product::<usize>() as u64 },
    }
}
