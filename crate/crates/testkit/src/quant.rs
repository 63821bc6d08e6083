//! Single int8 dense or conv2d layers with an f64 reference.

use rand::Rng;
use utoe_core::model_ir::{Attrs, GraphBuilder, ModelGraph, OpKind, QuantParams};

/// One quantized layer `y = [relu](x * w + b)` with fp32 boundaries.
#[derive(Debug, Clone)]
pub struct QuantCase {
    pub graph: ModelGraph,
    pub input: Vec<f32>,
    /// Reference outputs from real-valued arithmetic, clamped to the output
    /// tensor's representable range.
    pub reference: Vec<f64>,
    /// Per-element admissible absolute error.
    pub bound: Vec<f64>,
    pub conv: bool,
}

struct Geometry {
    conv: bool,
    n_in: usize,
    /// For each output element, the (input index, weight index) pairs it sums.
    terms: Vec<Vec<(usize, usize)>>,
    /// Bias index of each output element.
    bias_of: Vec<usize>,
    in_shape: Vec<usize>,
    w_shape: Vec<usize>,
    bias_shape: Vec<usize>,
    n_w: usize,
    n_b: usize,
    attrs: Attrs,
}

fn dense_geometry(rng: &mut impl Rng) -> Geometry {
    let (k, units) = (rng.random_range(1..=32usize), rng.random_range(1..=16usize));
    let terms = (0..units).map(|o| (0..k).map(|i| (i, o * k + i)).collect()).collect();
    Geometry {
        conv: false,
        n_in: k,
        terms,
        bias_of: (0..units).collect(),
        in_shape: vec![1, k],
        w_shape: vec![units, k],
        bias_shape: vec![units],
        n_w: units * k,
        n_b: units,
        attrs: Attrs::default(),
    }
}

fn conv_geometry(rng: &mut impl Rng) -> Geometry {
    let cin = rng.random_range(1..=3usize);
    let cout = rng.random_range(1..=4usize);
    let (h, w) = (rng.random_range(3..=8usize), rng.random_range(3..=8usize));
    let (kh, kw) = (rng.random_range(1..=3usize), rng.random_range(1..=3usize));
    let stride = [rng.random_range(1..=2usize), rng.random_range(1..=2usize)];
    let pad = [rng.random_range(0..kh), rng.random_range(0..kw)];
    let oh = (h + 2 * pad[0] - kh) / stride[0] + 1;
    let ow = (w + 2 * pad[1] - kw) / stride[1] + 1;
    let mut terms = Vec::new();
    let mut bias_of = Vec::new();
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut t = Vec::new();
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * stride[0] + ky) as isize - pad[0] as isize;
                            let x = (ox * stride[1] + kx) as isize - pad[1] as isize;
                            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                let xi = (ci * h + y as usize) * w + x as usize;
                                let wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                t.push((xi, wi));
                            }
                        }
                    }
                }
                terms.push(t);
                bias_of.push(co);
            }
        }
    }
    Geometry {
        conv: true,
        n_in: cin * h * w,
        terms,
        bias_of,
        in_shape: vec![1, cin, h, w],
        w_shape: vec![cout, cin, kh, kw],
        bias_shape: vec![cout, 1, 1],
        n_w: cout * cin * kh * kw,
        n_b: cout,
        attrs: Attrs { kernel: None, stride: Some(stride), padding: Some(pad), shape: None },
    }
}

/// Random layer and reference. The error bound combines half an output
/// step, the input rounding error propagated through `|w|`, and a small
/// allowance for single-precision requantization.
pub fn random_quant_case(rng: &mut impl Rng) -> QuantCase {
    let geo = if rng.random_bool(0.5) { conv_geometry(rng) } else { dense_geometry(rng) };
    let in_q = QuantParams::new(1.0 / 255.0, -128);
    let w_q = QuantParams::new(rng.random_range(0.002f32..0.05), 0);
    let acc_q = QuantParams::new(in_q.scale * w_q.scale, 0);
    let relu = rng.random_bool(0.5);

    let input: Vec<f32> = (0..geo.n_in).map(|_| rng.random::<f32>()).collect();
    let w: Vec<i8> = (0..geo.n_w).map(|_| rng.random_range(-127..=127)).collect();
    let bias: Vec<i32> = (0..geo.n_b).map(|_| rng.random_range(-2000..=2000)).collect();

    let real_w = |i: usize| w[i] as f64 * w_q.scale as f64;
    let raw: Vec<f64> = geo
        .terms
        .iter()
        .zip(&geo.bias_of)
        .map(|(t, &b)| {
            let s: f64 = t.iter().map(|&(xi, wi)| input[xi] as f64 * real_w(wi)).sum();
            let y = s + bias[b] as f64 * acc_q.scale as f64;
            if relu {
                y.max(0.0)
            } else {
                y
            }
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    // most outputs representable, a few clamped
    let out_scale = (peak / rng.random_range(60.0..140.0)) as f32;
    let out_q = QuantParams::new(out_scale, rng.random_range(-10..=10));
    let (lo, hi) =
        ((-128 - out_q.zero_point) as f64 * out_scale as f64, (127 - out_q.zero_point) as f64 * out_scale as f64);
    let reference: Vec<f64> = raw.iter().map(|y| y.clamp(lo, hi)).collect();
    let bound: Vec<f64> = geo
        .terms
        .iter()
        .zip(&reference)
        .map(|(t, y)| {
            let propagated: f64 = t.iter().map(|&(_, wi)| real_w(wi).abs()).sum::<f64>() * in_q.scale as f64 / 2.0;
            out_scale as f64 / 2.0 + propagated + out_scale as f64 * 1e-4 + y.abs() * 1e-6
        })
        .collect();

    let mut b = GraphBuilder::new(if geo.conv { "qconv" } else { "qdense" });
    b.input("x", &geo.in_shape).int8("x_q", in_q).output("y");
    b.param_i8("w", &geo.w_shape, w_q, &w).param_i32("b", &geo.bias_shape, acc_q, &bias);
    b.int32("acc", acc_q).int8("out", out_q);
    b.node("quantize", OpKind::Quantize, &["x"], &["x_q"]);
    let mac = if geo.conv { OpKind::Conv2d } else { OpKind::Dense };
    b.node_with("mac", mac, &["x_q", "w"], &["acc"], geo.attrs.clone());
    if relu {
        b.int32("sum", acc_q);
        b.node("bias", OpKind::Add, &["acc", "b"], &["sum"]);
        b.node("relu", OpKind::Relu, &["sum"], &["out"]);
    } else {
        b.node("bias", OpKind::Add, &["acc", "b"], &["out"]);
    }
    b.node("dequantize", OpKind::Dequantize, &["out"], &["y"]);
    let graph = b.build().expect("quantized layer is well-formed");
    QuantCase { graph, input, reference, bound, conv: geo.conv }
}
