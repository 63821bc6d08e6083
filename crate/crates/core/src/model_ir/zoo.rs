//! Built-in example models with deterministic pseudo-random weights.

use super::{Attrs, GraphBuilder, ModelGraph, OpKind, QuantParams};
use crate::worker::input::mix64;

fn weights_i8(tag: u64, n: usize) -> Vec<i8> {
    (0..n as u64).map(|i| ((mix64(tag ^ mix64(i)) % 255) as i64 - 127) as i8).collect()
}

fn bias_i32(tag: u64, n: usize, span: i32) -> Vec<i32> {
    (0..n as u64).map(|i| (mix64(tag ^ mix64(i)) % (2 * span as u64 + 1)) as i32 - span).collect()
}

/// Quantization of `[0, 1)` inputs onto the full int8 range.
const INPUT_Q: QuantParams = QuantParams { scale: 1.0 / 255.0, zero_point: -128 };

fn acc_q(x: QuantParams, w: QuantParams) -> QuantParams {
    QuantParams::new(x.scale * w.scale, 0)
}

/// Appends `dense -> add(bias) [-> relu]` with int8 weights, returning the
/// produced int8 tensor id.
#[allow(clippy::too_many_arguments)]
fn dense_block(
    b: &mut GraphBuilder,
    idx: usize,
    input: &str,
    in_q: QuantParams,
    in_features: usize,
    out_features: usize,
    out_q: QuantParams,
    relu: bool,
) -> String {
    let w_q = QuantParams::new(0.02, 0);
    let a_q = acc_q(in_q, w_q);
    let (w, bias, acc, sum, out) = (
        format!("dense{idx}_w"),
        format!("dense{idx}_b"),
        format!("dense{idx}_acc"),
        format!("dense{idx}_sum"),
        format!("dense{idx}_out"),
    );
    let tag = 0x5157_0000 + idx as u64;
    b.param_i8(&w, &[out_features, in_features], w_q, &weights_i8(tag, out_features * in_features))
        .param_i32(&bias, &[out_features], a_q, &bias_i32(tag << 8, out_features, 2000))
        .int32(&acc, a_q);
    b.node(&format!("dense{idx}"), OpKind::Dense, &[input, &w], &[&acc]);
    if relu {
        b.int32(&sum, a_q).int8(&out, out_q);
        b.node(&format!("bias_add{idx}"), OpKind::Add, &[&acc, &bias], &[&sum]);
        b.node(&format!("relu{idx}"), OpKind::Relu, &[&sum], &[&out]);
    } else {
        b.int8(&out, out_q);
        b.node(&format!("bias_add{idx}"), OpKind::Add, &[&acc, &bias], &[&out]);
    }
    out
}

/// Three-layer 1 -> 16 -> 16 -> 1 regressor with int8 body and fp32 I/O.
pub fn sinus() -> ModelGraph {
    let mut b = GraphBuilder::new("sinus");
    b.input("x", &[1, 1]).int8("x_q", INPUT_Q).output("y");
    b.node("quantize_in", OpKind::Quantize, &["x"], &["x_q"]);
    let h_q = QuantParams::new(0.05, -128);
    let h1 = dense_block(&mut b, 0, "x_q", INPUT_Q, 1, 16, h_q, true);
    let h2 = dense_block(&mut b, 1, &h1, h_q, 16, 16, h_q, true);
    let y = dense_block(&mut b, 2, &h2, h_q, 16, 1, QuantParams::new(0.1, 0), false);
    b.node("dequantize_out", OpKind::Dequantize, &[&y], &["y"]);
    b.build().expect("sinus model is well-formed")
}

/// LeNet-5 style classifier over a 28x28 single-channel image.
pub fn lenet5() -> ModelGraph {
    let mut b = GraphBuilder::new("lenet5");
    b.input("image", &[1, 1, 28, 28]).int8("image_q", INPUT_Q).output("logits");
    b.node("quantize_in", OpKind::Quantize, &["image"], &["image_q"]);

    let act_q = QuantParams::new(0.05, -128);
    let w_q = QuantParams::new(0.02, 0);

    let conv = |b: &mut GraphBuilder, idx: usize, input: &str, in_q: QuantParams, cin: usize, cout: usize| {
        let a_q = acc_q(in_q, w_q);
        let (w, bias, acc, sum, out, pooled) = (
            format!("conv{idx}_w"),
            format!("conv{idx}_b"),
            format!("conv{idx}_acc"),
            format!("conv{idx}_sum"),
            format!("conv{idx}_out"),
            format!("pool{idx}_out"),
        );
        let tag = 0xC0_0000 + idx as u64;
        b.param_i8(&w, &[cout, cin, 5, 5], w_q, &weights_i8(tag, cout * cin * 25))
            .param_i32(&bias, &[cout, 1, 1], a_q, &bias_i32(tag << 8, cout, 500))
            .int32(&acc, a_q)
            .int32(&sum, a_q)
            .int8(&out, act_q)
            .int8(&pooled, act_q);
        b.node(&format!("conv{idx}"), OpKind::Conv2d, &[input, &w], &[&acc]);
        b.node(&format!("conv_bias{idx}"), OpKind::Add, &[&acc, &bias], &[&sum]);
        b.node(&format!("conv_relu{idx}"), OpKind::Relu, &[&sum], &[&out]);
        b.node_with(&format!("pool{idx}"), OpKind::Maxpool2d, &[&out], &[&pooled], Attrs::window([2, 2], [2, 2]));
        pooled
    };
    let p1 = conv(&mut b, 0, "image_q", INPUT_Q, 1, 6);
    let p2 = conv(&mut b, 1, &p1, act_q, 6, 16);
    b.int8("flat", act_q);
    b.node_with("flatten", OpKind::Reshape, &[&p2], &["flat"], Attrs::reshape(vec![1, 256]));
    let f1 = dense_block(&mut b, 0, "flat", act_q, 256, 120, act_q, true);
    let f2 = dense_block(&mut b, 1, &f1, act_q, 120, 84, act_q, true);
    let f3 = dense_block(&mut b, 2, &f2, act_q, 84, 10, QuantParams::new(0.1, 0), false);
    b.node("dequantize_out", OpKind::Dequantize, &[&f3], &["logits"]);
    b.build().expect("lenet5 model is well-formed")
}

/// Single fp32 relu over four elements.
pub fn relu4() -> ModelGraph {
    let mut b = GraphBuilder::new("relu4");
    b.input("x", &[1, 4]).output("y");
    b.node("relu", OpKind::Relu, &["x"], &["y"]);
    b.build().expect("relu model is well-formed")
}

pub fn by_name(name: &str) -> Option<ModelGraph> {
    match name {
        "sinus" => Some(sinus()),
        "lenet5" => Some(lenet5()),
        "relu4" => Some(relu4()),
        _ => None,
    }
}

pub const NAMES: [&str; 3] = ["sinus", "lenet5", "relu4"];
