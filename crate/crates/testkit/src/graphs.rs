//! Random well-typed model graphs.

use rand::Rng;
use utoe_core::model_ir::{Attrs, DType, GraphBuilder, ModelGraph, OpKind, QuantParams};

#[derive(Debug, Clone)]
struct Value {
    id: String,
    shape: Vec<usize>,
    dtype: DType,
    quant: Option<QuantParams>,
}

/// Options for [`random_graph`].
#[derive(Debug, Clone, Copy)]
pub struct GraphShape {
    pub max_ops: usize,
    /// Allow int8/int32 tensors.
    pub quantized: bool,
    /// Probability of extending the newest value rather than an older one.
    pub chain_bias: f64,
}

impl Default for GraphShape {
    fn default() -> Self {
        GraphShape { max_ops: 8, quantized: true, chain_bias: 0.75 }
    }
}

struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    b: GraphBuilder,
    pool: Vec<Value>,
    counter: usize,
    chain_bias: f64,
}

impl<R: Rng> Gen<'_, R> {
    fn fresh(&mut self, prefix: &str) -> String {
        self.counter += 1;
        format!("{prefix}{}", self.counter)
    }

    fn act_q(&mut self) -> QuantParams {
        QuantParams::new(self.rng.random_range(0.01f32..0.1), self.rng.random_range(-20..=20))
    }

    fn declare(&mut self, dtype: DType, quant: Option<QuantParams>) -> String {
        let id = self.fresh("t");
        match dtype {
            DType::Fp32 => self.b.fp32(&id),
            DType::Int8 => self.b.int8(&id, quant.expect("int8 carries quant")),
            DType::Int32 => self.b.int32(&id, quant.expect("int32 carries quant")),
        };
        id
    }

    fn push(&mut self, id: String, shape: Vec<usize>, dtype: DType, quant: Option<QuantParams>) {
        self.pool.push(Value { id, shape, dtype, quant });
    }

    fn param(&mut self, shape: &[usize], dtype: DType, quant: Option<QuantParams>) -> String {
        let id = self.fresh("p");
        let n: usize = shape.iter().product();
        match dtype {
            DType::Fp32 => {
                let data: Vec<f32> = (0..n).map(|_| self.rng.random_range(-1.0f32..1.0)).collect();
                self.b.param_f32(&id, shape, &data);
            }
            DType::Int8 => {
                let data: Vec<i8> = (0..n).map(|_| self.rng.random_range(-127..=127)).collect();
                self.b.param_i8(&id, shape, quant.expect("quant"), &data);
            }
            DType::Int32 => {
                let data: Vec<i32> = (0..n).map(|_| self.rng.random_range(-500..=500)).collect();
                self.b.param_i32(&id, shape, quant.expect("quant"), &data);
            }
        }
        id
    }

    fn pick(&mut self) -> Value {
        let last = self.pool.len() - 1;
        let i = if self.rng.random_bool(self.chain_bias) { last } else { self.rng.random_range(0..=last) };
        self.pool[i].clone()
    }

    /// Output representation of a newly produced integer-or-float value.
    fn out_like(&mut self, x: &Value) -> (DType, Option<QuantParams>) {
        match x.dtype {
            DType::Fp32 => (DType::Fp32, None),
            _ if self.rng.random_bool(0.5) => (x.dtype, x.quant),
            _ => (DType::Int8, Some(self.act_q())),
        }
    }

    fn node(&mut self, kind: OpKind, inputs: &[&str], out: &str, attrs: Attrs) {
        let id = self.fresh("n");
        self.b.node_with(&id, kind, inputs, &[out], attrs);
    }

    fn step(&mut self, quantized: bool) {
        let x = self.pick();
        let rank4 = x.shape.len() == 4;
        let mut options: Vec<OpKind> = vec![OpKind::Relu, OpKind::Add, OpKind::Reshape, OpKind::Softmax];
        if x.dtype == DType::Fp32 && quantized {
            options.push(OpKind::Quantize);
        }
        if x.dtype.is_integer() {
            options.push(OpKind::Dequantize);
        }
        if x.dtype != DType::Int32 {
            options.push(if rank4 { OpKind::Conv2d } else { OpKind::Dense });
            options.push(if rank4 { OpKind::Conv2d } else { OpKind::Dense });
        }
        if rank4 && x.shape[2] >= 2 && x.shape[3] >= 2 {
            options.push(OpKind::Maxpool2d);
            options.push(OpKind::Avgpool2d);
        }
        let kind = options[self.rng.random_range(0..options.len())];
        match kind {
            OpKind::Relu => {
                let (dt, q) = self.out_like(&x);
                let out = self.declare(dt, q);
                self.node(kind, &[&x.id], &out, Attrs::default());
                self.push(out, x.shape.clone(), dt, q);
            }
            OpKind::Softmax => {
                let (dt, q) = match x.dtype {
                    DType::Fp32 => (DType::Fp32, None),
                    _ => (DType::Int8, Some(QuantParams::new(1.0 / 256.0, -128))),
                };
                let out = self.declare(dt, q);
                self.node(kind, &[&x.id], &out, Attrs::default());
                self.push(out, x.shape.clone(), dt, q);
            }
            OpKind::Quantize => {
                let q = self.act_q();
                let out = self.declare(DType::Int8, Some(q));
                self.node(kind, &[&x.id], &out, Attrs::default());
                self.push(out, x.shape.clone(), DType::Int8, Some(q));
            }
            OpKind::Dequantize => {
                let out = self.declare(DType::Fp32, None);
                self.node(kind, &[&x.id], &out, Attrs::default());
                self.push(out, x.shape.clone(), DType::Fp32, None);
            }
            OpKind::Reshape => {
                let n: usize = x.shape.iter().product();
                let target = if rank4 { vec![1, n] } else { vec![1, n, 1, 1] };
                let out = self.declare(x.dtype, x.quant);
                self.node(kind, &[&x.id], &out, Attrs::reshape(target.clone()));
                self.push(out, target, x.dtype, x.quant);
            }
            OpKind::Add => self.add(x),
            OpKind::Dense | OpKind::Conv2d => self.mac(x, kind),
            OpKind::Maxpool2d | OpKind::Avgpool2d => {
                let k = [self.rng.random_range(1..=2), 2];
                let s = [self.rng.random_range(1..=2), self.rng.random_range(1..=2)];
                let pad = if k[0] == 2 && self.rng.random_bool(0.3) { [1, 0] } else { [0, 0] };
                let oh = (x.shape[2] + 2 * pad[0] - k[0]) / s[0] + 1;
                let ow = (x.shape[3] + 2 * pad[1] - k[1]) / s[1] + 1;
                let (dt, q) = self.out_like(&x);
                let out = self.declare(dt, q);
                let attrs = Attrs { kernel: Some(k), stride: Some(s), padding: Some(pad), shape: None };
                self.node(kind, &[&x.id], &out, attrs);
                self.push(out, vec![x.shape[0], x.shape[1], oh, ow], dt, q);
            }
        }
    }

    fn add(&mut self, x: Value) {
        let partner = self
            .pool
            .iter()
            .filter(|v| v.id != x.id && v.shape == x.shape && v.dtype.is_integer() == x.dtype.is_integer())
            .cloned()
            .collect::<Vec<_>>();
        let other = if !partner.is_empty() && self.rng.random_bool(0.5) {
            partner[self.rng.random_range(0..partner.len())].id.clone()
        } else {
            let bshape: Vec<usize> = match (x.shape.len(), self.rng.random_range(0..3)) {
                (4, 0) => vec![x.shape[1], 1, 1],
                (_, 1) => x.shape.clone(),
                _ => vec![*x.shape.last().expect("non-empty")],
            };
            match x.dtype {
                DType::Fp32 => self.param(&bshape, DType::Fp32, None),
                // same scale as x keeps the integer path
                DType::Int32 => self.param(&bshape, DType::Int32, x.quant),
                DType::Int8 => {
                    let q = if self.rng.random_bool(0.5) { x.quant } else { Some(self.act_q()) };
                    self.param(&bshape, DType::Int8, q)
                }
            }
        };
        let (dt, q) = self.out_like(&x);
        let out = self.declare(dt, q);
        self.node(OpKind::Add, &[&x.id, &other], &out, Attrs::default());
        self.push(out, x.shape.clone(), dt, q);
    }

    fn mac(&mut self, x: Value, kind: OpKind) {
        let integer = x.dtype == DType::Int8;
        let w_q = integer.then(|| QuantParams::new(self.rng.random_range(0.005f32..0.05), 0));
        let w_dt = if integer { DType::Int8 } else { DType::Fp32 };
        let acc_q = x.quant.zip(w_q).map(|(a, w)| QuantParams::new(a.scale * w.scale, 0));
        let (out_dt, out_q) = match (integer, self.rng.random_bool(0.6)) {
            (false, _) => (DType::Fp32, None),
            (true, true) => (DType::Int32, acc_q),
            (true, false) => (DType::Int8, Some(self.act_q())),
        };
        let (w, attrs, shape) = if kind == OpKind::Dense {
            let units = self.rng.random_range(1..=8);
            let w = self.param(&[units, x.shape[1]], w_dt, w_q);
            (w, Attrs::default(), vec![x.shape[0], units])
        } else {
            let cout = self.rng.random_range(1..=3);
            let kh = self.rng.random_range(1..=x.shape[2].min(3));
            let kw = self.rng.random_range(1..=x.shape[3].min(3));
            let stride = [self.rng.random_range(1..=2), self.rng.random_range(1..=2)];
            let pad = [self.rng.random_range(0..=1usize.min(kh - 1)), self.rng.random_range(0..=1usize.min(kw - 1))];
            let w = self.param(&[cout, x.shape[1], kh, kw], w_dt, w_q);
            let oh = (x.shape[2] + 2 * pad[0] - kh) / stride[0] + 1;
            let ow = (x.shape[3] + 2 * pad[1] - kw) / stride[1] + 1;
            let attrs = Attrs { kernel: None, stride: Some(stride), padding: Some(pad), shape: None };
            (w, attrs, vec![x.shape[0], cout, oh, ow])
        };
        let out = self.declare(out_dt, out_q);
        self.node(kind, &[&x.id, &w], &out, attrs);
        self.push(out, shape, out_dt, out_q);
        // layer template: bias add and activation right behind the MAC
        if self.rng.random_bool(0.6) {
            let v = self.pool.last().expect("just pushed").clone();
            self.add(v);
            if self.rng.random_bool(0.5) {
                let v = self.pool.last().expect("just pushed").clone();
                let (dt, q) = self.out_like(&v);
                let out = self.declare(dt, q);
                self.node(OpKind::Relu, &[&v.id], &out, Attrs::default());
                self.push(out, v.shape.clone(), dt, q);
            }
        }
    }

    fn finish(mut self) -> ModelGraph {
        let mut sinks = vec![self.pool.len() - 1];
        if self.pool.len() > 2 && self.rng.random_bool(0.3) {
            let extra = self.rng.random_range(1..self.pool.len() - 1);
            sinks.push(extra);
        }
        for (k, &i) in sinks.iter().enumerate() {
            let v = self.pool[i].clone();
            let y = format!("y{k}");
            self.b.output(&y);
            if v.dtype.is_integer() {
                self.node(OpKind::Dequantize, &[&v.id], &y, Attrs::default());
            } else {
                self.node(OpKind::Reshape, &[&v.id], &y, Attrs::reshape(v.shape.clone()));
            }
        }
        self.b.build().expect("generated graphs are well-formed")
    }
}

/// A random valid graph with between 1 and `shape.max_ops` operators
/// before the output conversions.
pub fn random_graph(rng: &mut impl Rng, shape: GraphShape) -> ModelGraph {
    let mut g = Gen { rng, b: GraphBuilder::new("random"), pool: Vec::new(), counter: 0, chain_bias: shape.chain_bias };
    let input_shape = if g.rng.random_bool(0.5) {
        vec![1, g.rng.random_range(1..=8)]
    } else {
        vec![1, g.rng.random_range(1..=3), g.rng.random_range(2..=6), g.rng.random_range(2..=6)]
    };
    g.b.input("x0", &input_shape);
    g.push("x0".into(), input_shape.clone(), DType::Fp32, None);
    if g.rng.random_bool(0.25) {
        g.b.input("x1", &input_shape);
        g.push("x1".into(), input_shape, DType::Fp32, None);
    }
    let ops = g.rng.random_range(1..=shape.max_ops.max(1));
    for _ in 0..ops {
        g.step(shape.quantized);
    }
    g.finish()
}

/// fp32 graph with `intermediates` intermediate tensors of varied sizes:
/// a random DAG of relu/add/dense nodes over 2-D tensors.
pub fn random_fp32_dag(rng: &mut impl Rng, intermediates: usize) -> ModelGraph {
    let mut b = GraphBuilder::new("dag");
    let f0 = rng.random_range(1..=12usize);
    b.input("x", &[1, f0]);
    let mut vals: Vec<(String, usize)> = vec![("x".into(), f0)];
    let total = intermediates + 1;
    for i in 0..total {
        let last = i + 1 == total;
        let id = if last { "y".to_string() } else { format!("t{i}") };
        let src = if rng.random_bool(0.6) { vals.len() - 1 } else { rng.random_range(0..vals.len()) };
        let (sid, sf) = vals[src].clone();
        if last {
            b.output(&id);
        } else {
            b.fp32(&id);
        }
        let node = format!("n{i}");
        let partner = vals.iter().filter(|(v, f)| *f == sf && *v != sid).map(|(v, _)| v.clone()).next();
        let out_f = match (rng.random_range(0..3), partner) {
            (0, Some(p)) => {
                b.node(&node, OpKind::Add, &[&sid, &p], &[&id]);
                sf
            }
            (1, _) => {
                let units = rng.random_range(1..=12usize);
                let w = format!("w{i}");
                let data: Vec<f32> = (0..units * sf).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                b.param_f32(&w, &[units, sf], &data);
                b.node(&node, OpKind::Dense, &[&sid, &w], &[&id]);
                units
            }
            _ => {
                b.node(&node, OpKind::Relu, &[&sid], &[&id]);
                sf
            }
        };
        vals.push((id, out_f));
    }
    b.build().expect("generated dag is well-formed")
}
