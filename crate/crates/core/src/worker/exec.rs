//! Quantized interpreter over the planned arena.
//!
//! Every node is evaluated one output element at a time. A kernel first
//! materializes its prologue members into the workspace, then evaluates its
//! head for each output element and pushes the value through the tail
//! members before storing it. Unfused execution stores and reloads the same
//! values at each node boundary, so both groupings are bit-identical.

use std::time::Instant;

use crate::compiler::DeployableModel;
use crate::model_ir::{DType, ModelGraph, OpKind, QuantParams, TensorKind};

/// Value of one tensor element: the stored integer for int8/int32 tensors,
/// the real value for fp32.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    Int(i64),
    Float(f32),
}

pub fn round_half_even(x: f32) -> f32 {
    x.round_ties_even()
}

/// `clamp(round_half_even(x / scale) + zero_point)` into the dtype range.
pub fn quantize_value(x: f32, q: QuantParams, dtype: DType) -> i64 {
    let (lo, hi) = dtype.int_range();
    let r = round_half_even(x / q.scale);
    let v = if r.is_finite() {
        r as i64
    } else if r > 0.0 {
        hi
    } else {
        lo
    };
    (v.saturating_add(q.zero_point as i64)).clamp(lo, hi)
}

pub fn dequantize_value(v: i64, q: QuantParams) -> f32 {
    (v - q.zero_point as i64) as f32 * q.scale
}

/// Maps an accumulator with real scale `scale` into the output tensor's
/// representation.
fn convert_acc(acc: i64, scale: f32, out: &Operand) -> Scalar {
    match out.quant {
        None => Scalar::Float(acc as f32 * scale),
        Some(q) => {
            let (lo, hi) = out.dtype.int_range();
            let m = scale / q.scale;
            let v = if m == 1.0 {
                acc
            } else {
                let r = round_half_even(acc as f32 * m);
                if r.is_finite() {
                    r as i64
                } else if r > 0.0 {
                    hi
                } else {
                    lo
                }
            };
            Scalar::Int(v.saturating_add(q.zero_point as i64).clamp(lo, hi))
        }
    }
}

fn from_real(x: f32, out: &Operand) -> Scalar {
    match out.quant {
        None => Scalar::Float(x),
        Some(q) => Scalar::Int(quantize_value(x, q, out.dtype)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Src {
    Arena(usize),
    Param(usize),
    /// The streamed value of the previous kernel member.
    Chain,
}

#[derive(Debug, Clone)]
struct Operand {
    src: Src,
    dtype: DType,
    quant: Option<QuantParams>,
    shape: Vec<usize>,
    /// (output dim size, input stride) from the innermost dim outward; empty
    /// when the operand is indexed like the output.
    bcast: Vec<(usize, usize)>,
}

impl Operand {
    fn zero_point(&self) -> i64 {
        self.quant.map_or(0, |q| q.zero_point as i64)
    }

    fn scale(&self) -> f32 {
        self.quant.map_or(1.0, |q| q.scale)
    }

    fn map_index(&self, mut e: usize) -> usize {
        if self.bcast.is_empty() {
            return e;
        }
        let mut idx = 0;
        for &(dim, stride) in &self.bcast {
            idx += (e % dim) * stride;
            e /= dim;
        }
        idx
    }
}

#[derive(Debug, Clone)]
enum ParamData {
    I8(Vec<i8>),
    I32(Vec<i32>),
    F32(Vec<f32>),
}

#[derive(Debug, Clone)]
struct Node {
    kind: OpKind,
    inputs: Vec<Operand>,
    out: Operand,
    kernel: [usize; 2],
    stride: [usize; 2],
    padding: [usize; 2],
}

#[derive(Debug, Clone)]
struct Kernel {
    prologue: Vec<Node>,
    head: Node,
    tail: Vec<Node>,
    /// Where the final value goes.
    out: Operand,
    elements: usize,
    cost_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelTiming {
    pub wall_ns: u64,
    pub cost_ns: u64,
}

/// A loaded model with its arena. All buffers are allocated at load time.
#[derive(Debug, Clone)]
pub struct Executor {
    arena: Vec<u8>,
    params: Vec<ParamData>,
    kernels: Vec<Kernel>,
    inputs: Vec<(usize, usize)>,
    outputs: Vec<(usize, usize)>,
    timings: Vec<KernelTiming>,
}

struct Env<'a> {
    arena: &'a [u8],
    params: &'a [ParamData],
}

impl Env<'_> {
    #[inline]
    fn read(&self, op: &Operand, i: usize) -> Scalar {
        match op.src {
            Src::Arena(off) => match op.dtype {
                DType::Int8 => Scalar::Int(self.arena[off + i] as i8 as i64),
                DType::Int32 => {
                    let p = off + 4 * i;
                    Scalar::Int(i32::from_le_bytes(self.arena[p..p + 4].try_into().expect("4 bytes")) as i64)
                }
                DType::Fp32 => {
                    let p = off + 4 * i;
                    Scalar::Float(f32::from_le_bytes(self.arena[p..p + 4].try_into().expect("4 bytes")))
                }
            },
            Src::Param(k) => match &self.params[k] {
                ParamData::I8(v) => Scalar::Int(v[i] as i64),
                ParamData::I32(v) => Scalar::Int(v[i] as i64),
                ParamData::F32(v) => Scalar::Float(v[i]),
            },
            Src::Chain => unreachable!("chain operands are substituted before reading"),
        }
    }

    #[inline]
    fn int(&self, op: &Operand, i: usize) -> i64 {
        match self.read(op, i) {
            Scalar::Int(v) => v - op.zero_point(),
            Scalar::Float(_) => unreachable!("validated dtype"),
        }
    }

    #[inline]
    fn real(&self, op: &Operand, i: usize) -> f32 {
        as_real(self.read(op, i), op)
    }
}

fn as_real(v: Scalar, op: &Operand) -> f32 {
    match (v, op.quant) {
        (Scalar::Float(x), _) => x,
        (Scalar::Int(q), Some(qp)) => dequantize_value(q, qp),
        (Scalar::Int(q), None) => q as f32,
    }
}

fn write(arena: &mut [u8], op: &Operand, i: usize, v: Scalar) {
    let Src::Arena(off) = op.src else { unreachable!("outputs live in the arena") };
    match (op.dtype, v) {
        (DType::Int8, Scalar::Int(q)) => arena[off + i] = q as i8 as u8,
        (DType::Int32, Scalar::Int(q)) => {
            arena[off + 4 * i..off + 4 * i + 4].copy_from_slice(&(q as i32).to_le_bytes())
        }
        (DType::Fp32, Scalar::Float(x)) => arena[off + 4 * i..off + 4 * i + 4].copy_from_slice(&x.to_le_bytes()),
        _ => unreachable!("value representation matches the output dtype"),
    }
}

/// Element `e` of `node`'s output. `chain` replaces the operand whose
/// source is [`Src::Chain`].
fn eval(node: &Node, e: usize, chain: Option<Scalar>, env: &Env) -> Scalar {
    let operand = |j: usize| -> Scalar {
        let op = &node.inputs[j];
        match op.src {
            Src::Chain => chain.expect("chained member"),
            _ => env.read(op, op.map_index(e)),
        }
    };
    let out = &node.out;
    match node.kind {
        OpKind::Dense => {
            let (x, w) = (&node.inputs[0], &node.inputs[1]);
            let k = x.shape[1];
            let units = w.shape[0];
            let (n, o) = (e / units, e % units);
            if x.dtype.is_integer() {
                let mut acc: i64 = 0;
                for i in 0..k {
                    acc += env.int(x, n * k + i) * env.int(w, o * k + i);
                }
                convert_acc(acc, x.scale() * w.scale(), out)
            } else {
                let mut acc = 0.0f32;
                for i in 0..k {
                    acc += env.real(x, n * k + i) * env.real(w, o * k + i);
                }
                Scalar::Float(acc)
            }
        }
        OpKind::Conv2d => {
            let (x, w) = (&node.inputs[0], &node.inputs[1]);
            let [_, cin, ih, iw] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
            let [_, cout, oh, ow] = [out.shape[0], out.shape[1], out.shape[2], out.shape[3]];
            let (kh, kw) = (w.shape[2], w.shape[3]);
            let ox = e % ow;
            let oy = (e / ow) % oh;
            let co = (e / (ow * oh)) % cout;
            let n = e / (ow * oh * cout);
            let integer = x.dtype.is_integer();
            let (mut acc, mut facc) = (0i64, 0.0f32);
            for ci in 0..cin {
                for ky in 0..kh {
                    let y = (oy * node.stride[0] + ky) as isize - node.padding[0] as isize;
                    if y < 0 || y as usize >= ih {
                        continue;
                    }
                    for kx in 0..kw {
                        let xx = (ox * node.stride[1] + kx) as isize - node.padding[1] as isize;
                        if xx < 0 || xx as usize >= iw {
                            continue;
                        }
                        let xi = ((n * cin + ci) * ih + y as usize) * iw + xx as usize;
                        let wi = ((co * cin + ci) * kh + ky) * kw + kx;
                        if integer {
                            acc += env.int(x, xi) * env.int(w, wi);
                        } else {
                            facc += env.real(x, xi) * env.real(w, wi);
                        }
                    }
                }
            }
            if integer {
                convert_acc(acc, x.scale() * w.scale(), out)
            } else {
                Scalar::Float(facc)
            }
        }
        OpKind::Maxpool2d | OpKind::Avgpool2d => {
            let x = &node.inputs[0];
            let [_, c, ih, iw] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
            let [oh, ow] = [out.shape[2], out.shape[3]];
            let ox = e % ow;
            let oy = (e / ow) % oh;
            let nc = e / (ow * oh);
            debug_assert!(nc < x.shape[0] * c);
            let integer = x.dtype.is_integer();
            let (mut imax, mut fmax) = (i64::MIN, f32::NEG_INFINITY);
            let (mut isum, mut fsum, mut count) = (0i64, 0.0f32, 0i64);
            for ky in 0..node.kernel[0] {
                let y = (oy * node.stride[0] + ky) as isize - node.padding[0] as isize;
                if y < 0 || y as usize >= ih {
                    continue;
                }
                for kx in 0..node.kernel[1] {
                    let xx = (ox * node.stride[1] + kx) as isize - node.padding[1] as isize;
                    if xx < 0 || xx as usize >= iw {
                        continue;
                    }
                    let i = (nc * ih + y as usize) * iw + xx as usize;
                    count += 1;
                    if integer {
                        let v = env.int(x, i);
                        imax = imax.max(v);
                        isum += v;
                    } else {
                        let v = env.real(x, i);
                        fmax = fmax.max(v);
                        fsum += v;
                    }
                }
            }
            let count = count.max(1);
            match (node.kind, integer) {
                (OpKind::Maxpool2d, true) => convert_acc(imax, x.scale(), out),
                (OpKind::Maxpool2d, false) => from_real(fmax, out),
                (_, true) => match out.quant {
                    Some(q) => {
                        let (lo, hi) = out.dtype.int_range();
                        let m = x.scale() / (q.scale * count as f32);
                        let v = round_half_even(isum as f32 * m) as i64 + q.zero_point as i64;
                        Scalar::Int(v.clamp(lo, hi))
                    }
                    None => Scalar::Float(isum as f32 * x.scale() / count as f32),
                },
                (_, false) => from_real(fsum / count as f32, out),
            }
        }
        OpKind::Add => {
            let (a, b) = (&node.inputs[0], &node.inputs[1]);
            let (va, vb) = (operand(0), operand(1));
            match (va, vb) {
                (Scalar::Int(qa), Scalar::Int(qb)) if a.scale() == b.scale() => {
                    convert_acc((qa - a.zero_point()) + (qb - b.zero_point()), a.scale(), out)
                }
                _ => from_real(as_real(va, a) + as_real(vb, b), out),
            }
        }
        OpKind::Relu => {
            let x = &node.inputs[0];
            match operand(0) {
                Scalar::Int(q) => convert_acc((q - x.zero_point()).max(0), x.scale(), out),
                Scalar::Float(v) => from_real(v.max(0.0), out),
            }
        }
        OpKind::Reshape => operand(0),
        OpKind::Quantize => {
            let x = &node.inputs[0];
            from_real(as_real(operand(0), x), out)
        }
        OpKind::Dequantize => {
            let x = &node.inputs[0];
            Scalar::Float(as_real(operand(0), x))
        }
        OpKind::Softmax => {
            let x = &node.inputs[0];
            let row = *x.shape.last().expect("non-empty shape");
            let base = e - e % row;
            let mut max = f32::NEG_INFINITY;
            for i in 0..row {
                max = max.max(env.real(x, base + i));
            }
            let mut sum = 0.0f32;
            for i in 0..row {
                sum += (env.real(x, base + i) - max).exp();
            }
            let v = (env.real(x, e) - max).exp() / sum;
            from_real(v, out)
        }
    }
}

impl Executor {
    pub fn new(model: &DeployableModel, board_cost_ns: &[u64]) -> Self {
        let g = &model.graph;
        let params: Vec<ParamData> = g
            .params()
            .iter()
            .map(|p| {
                let t = g.tensor(&p.tensor).expect("validated");
                match t.dtype {
                    DType::Int8 => ParamData::I8(p.data.iter().map(|&b| b as i8).collect()),
                    DType::Int32 => ParamData::I32(
                        p.data.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().expect("4"))).collect(),
                    ),
                    DType::Fp32 => ParamData::F32(
                        p.data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect(),
                    ),
                }
            })
            .collect();

        let mut kernels = Vec::with_capacity(model.kernels.len());
        for (k, fk) in model.kernels.iter().enumerate() {
            let mut ws_cursor = model.plan.workspace_offsets[k] as usize;
            let mut local: Vec<(String, usize)> = Vec::new();
            let mut prologue = Vec::new();
            for &m in &fk.members[..fk.prologue] {
                let node = &g.nodes()[m];
                let id = &node.outputs[0];
                local.push((id.clone(), ws_cursor));
                let size = g.tensor(id).expect("validated").byte_size();
                prologue.push(compile_node(g, model, m, &local, None, Some(ws_cursor)));
                ws_cursor += crate::compiler::align8(size as u64) as usize;
            }
            let head_idx = fk.members[fk.prologue];
            let head = compile_node(g, model, head_idx, &local, None, None);
            let mut prev = g.nodes()[head_idx].outputs[0].clone();
            let mut tail = Vec::new();
            for &m in &fk.members[fk.prologue + 1..] {
                tail.push(compile_node(g, model, m, &local, Some(&prev), None));
                prev = g.nodes()[m].outputs[0].clone();
            }
            let out = arena_operand(g, model, &fk.output);
            kernels.push(Kernel {
                elements: g.tensor(&fk.output).expect("validated").elements(),
                prologue,
                head,
                tail,
                out,
                cost_ns: board_cost_ns.get(k).copied().unwrap_or(0),
            });
        }
        let slot = |t: &crate::model_ir::TensorSpec| (model.plan.offsets[&t.id] as usize, t.elements());
        Executor {
            arena: vec![0; model.plan.arena_bytes as usize],
            params,
            inputs: g.inputs().map(slot).collect(),
            outputs: g.outputs().map(slot).collect(),
            timings: vec![KernelTiming::default(); kernels.len()],
            kernels,
        }
    }

    pub fn kernel_count(&self) -> usize {
        self.kernels.len()
    }

    pub fn input_count(&self) -> usize {
        self.inputs.len()
    }

    /// Per-kernel timings of the last run.
    pub fn timings(&self) -> &[KernelTiming] {
        &self.timings
    }

    /// Writes graph input `ordinal` from `values`.
    pub fn set_input(&mut self, ordinal: usize, values: &[f32]) {
        let (off, n) = self.inputs[ordinal];
        assert_eq!(values.len(), n, "input {ordinal} expects {n} elements");
        for (i, v) in values.iter().enumerate() {
            self.arena[off + 4 * i..off + 4 * i + 4].copy_from_slice(&v.to_le_bytes());
        }
    }

    /// Fills every graph input with the deterministic stream of `(seed, trial)`.
    pub fn fill_inputs(&mut self, seed: u64, trial: u64) {
        for ordinal in 0..self.inputs.len() {
            let (off, n) = self.inputs[ordinal];
            for i in 0..n {
                let v = super::input::uniform_at(seed, trial, ordinal as u64, i as u64);
                self.arena[off + 4 * i..off + 4 * i + 4].copy_from_slice(&v.to_le_bytes());
            }
        }
    }

    pub fn output(&self, ordinal: usize) -> Vec<f32> {
        let (off, n) = self.outputs[ordinal];
        (0..n).map(|i| f32::from_le_bytes(self.arena[off + 4 * i..off + 4 * i + 4].try_into().expect("4"))).collect()
    }

    pub fn outputs(&self) -> Vec<Vec<f32>> {
        (0..self.outputs.len()).map(|i| self.output(i)).collect()
    }

    /// Runs one kernel on the current arena contents.
    pub fn run_kernel(&mut self, k: usize) -> KernelTiming {
        let start = Instant::now();
        let kernel = &self.kernels[k];
        for node in &kernel.prologue {
            let n = node.out.shape.iter().product::<usize>();
            for e in 0..n {
                let v = eval(node, e, None, &Env { arena: &self.arena, params: &self.params });
                write(&mut self.arena, &node.out, e, v);
            }
        }
        for e in 0..kernel.elements {
            let env = Env { arena: &self.arena, params: &self.params };
            let mut v = eval(&kernel.head, e, None, &env);
            for node in &kernel.tail {
                v = eval(node, e, Some(v), &env);
            }
            write(&mut self.arena, &kernel.out, e, v);
        }
        let wall_ns = (start.elapsed().as_nanos() as u64).max(1);
        let t = KernelTiming { wall_ns, cost_ns: kernel.cost_ns };
        self.timings[k] = t;
        t
    }

    /// Runs all kernels in order; returns the wall-clock span in ns.
    pub fn run(&mut self) -> u64 {
        let start = Instant::now();
        for k in 0..self.kernels.len() {
            self.run_kernel(k);
        }
        (start.elapsed().as_nanos() as u64).max(1)
    }

    /// Sum of the per-kernel cost-model latencies.
    pub fn cost_ns(&self) -> u64 {
        self.kernels.iter().map(|k| k.cost_ns).sum()
    }
}

fn arena_operand(g: &ModelGraph, model: &DeployableModel, id: &str) -> Operand {
    let t = g.tensor(id).expect("validated");
    Operand {
        src: Src::Arena(model.plan.offsets[id] as usize),
        dtype: t.dtype,
        quant: t.quant,
        shape: t.shape.clone(),
        bcast: Vec::new(),
    }
}

fn compile_node(
    g: &ModelGraph,
    model: &DeployableModel,
    idx: usize,
    workspace: &[(String, usize)],
    chain: Option<&str>,
    out_at: Option<usize>,
) -> Node {
    let node = &g.nodes()[idx];
    let out_spec = g.tensor(&node.outputs[0]).expect("validated");
    let elementwise = matches!(node.kind, OpKind::Add | OpKind::Relu | OpKind::Quantize | OpKind::Dequantize);
    let inputs = node
        .inputs
        .iter()
        .map(|id| {
            let t = g.tensor(id).expect("validated");
            let src = if chain == Some(id.as_str()) {
                Src::Chain
            } else if t.kind == TensorKind::Param {
                Src::Param(g.param_position(id).expect("param blob"))
            } else if let Some((_, off)) = workspace.iter().find(|(w, _)| w == id) {
                Src::Arena(*off)
            } else {
                Src::Arena(model.plan.offsets[id] as usize)
            };
            let bcast = if elementwise && t.shape != out_spec.shape {
                broadcast_strides(&out_spec.shape, &t.shape)
            } else {
                Vec::new()
            };
            Operand { src, dtype: t.dtype, quant: t.quant, shape: t.shape.clone(), bcast }
        })
        .collect();
    let out = Operand {
        src: Src::Arena(out_at.unwrap_or(0)),
        dtype: out_spec.dtype,
        quant: out_spec.quant,
        shape: out_spec.shape.clone(),
        bcast: Vec::new(),
    };
    let kernel = node.attrs.kernel.unwrap_or([1, 1]);
    let stride = match node.kind {
        OpKind::Maxpool2d | OpKind::Avgpool2d => node.attrs.stride.unwrap_or(kernel),
        _ => node.attrs.stride_or_default(),
    };
    Node { kind: node.kind, inputs, out, kernel, stride, padding: node.attrs.padding_or_default() }
}

/// Right-aligned broadcast of `input` onto `out`.
fn broadcast_strides(out: &[usize], input: &[usize]) -> Vec<(usize, usize)> {
    let mut res = Vec::with_capacity(out.len());
    let mut stride = 1;
    for (i, &dim) in out.iter().enumerate().rev() {
        let from_end = out.len() - 1 - i;
        let in_dim = if from_end < input.len() { input[input.len() - 1 - from_end] } else { 1 };
        res.push((dim, if in_dim == 1 { 0 } else { stride }));
        stride *= in_dim;
    }
    res
}
