//! Computational-graph model representation.
//!
//! A [`ModelGraph`] is a topologically ordered list of operators over a
//! tensor table. Weights and activations are int8 with affine quantization;
//! graph inputs and outputs are fp32 with explicit `quantize`/`dequantize`
//! nodes at the boundary. Param tensors are named `p0..pn` in the order the
//! node list first consumes them; the names are fixed at load time so they
//! survive fusion unchanged.
//!
//! Pool strides default to the kernel size, conv2d strides to 1, and all
//! padding to 0.

mod builder;
mod format;
mod shape;
mod types;
mod validate;
pub mod zoo;

use thiserror::Error;

pub use builder::GraphBuilder;
pub use format::{load_model, save_model};
pub(crate) use format::{load_structure, save_structure};
pub use shape::{broadcasts_onto, infer_shapes, macs_of, op_cost, OpCost};
pub use types::{Attrs, DType, ModelGraph, OpKind, OperatorNode, ParamBlob, QuantParams, TensorKind, TensorSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed model document: {0}")]
    Parse(String),
    #[error("invalid model: {entity}: {message}")]
    Validation { entity: String, message: String },
    #[error("shape mismatch at node {node}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { node: String, expected: Vec<usize>, actual: Vec<usize> },
}

impl ModelError {
    pub(crate) fn validation(entity: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Validation { entity: entity.into(), message: message.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu_doc() -> &'static str {
        r#"{
            "name": "relu",
            "tensors": [
                {"id": "x", "dtype": "fp32", "shape": [4], "kind": "input"},
                {"id": "y", "dtype": "fp32", "kind": "output"}
            ],
            "nodes": [
                {"id": "r", "kind": "relu", "inputs": ["x"], "outputs": ["y"], "attrs": {}}
            ],
            "params": {}
        }"#
    }

    #[test]
    fn minimal_relu_document() {
        let g = load_model(relu_doc().as_bytes()).unwrap();
        assert_eq!(g.nodes().len(), 1);
        assert_eq!(g.tensors().len(), 2);
        let g = infer_shapes(&g).unwrap();
        assert_eq!(g.tensor("y").unwrap().shape, vec![4]);
    }

    #[test]
    fn missing_tensor_is_named() {
        let doc = relu_doc().replace(r#""outputs": ["y"]"#, r#""outputs": ["nope"]"#);
        match load_model(doc.as_bytes()) {
            Err(ModelError::Validation { entity, message }) => {
                assert_eq!(entity, "node r");
                assert!(message.contains("nope"), "{message}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(load_model(b"{\"name\": 3"), Err(ModelError::Parse(_))));
        let unknown_key = relu_doc().replace("\"params\"", "\"parameters\"");
        assert!(matches!(load_model(unknown_key.as_bytes()), Err(ModelError::Parse(_))));
    }

    #[test]
    fn sinus_structure_and_param_names() {
        let g = zoo::sinus();
        let kinds: Vec<OpKind> = g.nodes().iter().map(|n| n.kind).collect();
        use OpKind::*;
        assert_eq!(kinds, vec![Quantize, Dense, Add, Relu, Dense, Add, Relu, Dense, Add, Dequantize]);
        let names: Vec<(&str, &str)> = g.params().iter().map(|p| (p.tensor.as_str(), p.name.as_str())).collect();
        assert_eq!(
            names,
            vec![
                ("dense0_w", "p0"),
                ("dense0_b", "p1"),
                ("dense1_w", "p2"),
                ("dense1_b", "p3"),
                ("dense2_w", "p4"),
                ("dense2_b", "p5"),
            ]
        );
        assert_eq!(g.param("dense1_w").unwrap().data.len(), 256);
        assert_eq!(g.param("dense1_b").unwrap().data.len(), 64);
    }

    #[test]
    fn sinus_round_trips() {
        let g = zoo::sinus();
        let back = load_model(&save_model(&g)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn dense_shape() {
        let mut b = GraphBuilder::new("d");
        b.input("x", &[1, 16]).param_f32("w", &[16, 16], &[0.0; 256]).output("y");
        b.node("d", OpKind::Dense, &["x", "w"], &["y"]);
        assert_eq!(b.build().unwrap().tensor("y").unwrap().shape, vec![1, 16]);
    }

    fn conv_builder() -> GraphBuilder {
        let mut b = GraphBuilder::new("c");
        b.input("x", &[1, 1, 28, 28]).param_f32("w", &[6, 1, 5, 5], &[0.0; 150]).fp32("c").output("y");
        b.node("conv", OpKind::Conv2d, &["x", "w"], &["c"]);
        b
    }

    #[test]
    fn conv_shape_and_macs() {
        let mut b = conv_builder();
        b.node_with("flat", OpKind::Reshape, &["c"], &["y"], Attrs::reshape(vec![1, 3456]));
        let g = b.build().unwrap();
        assert_eq!(g.tensor("c").unwrap().shape, vec![1, 6, 24, 24]);
        assert_eq!(g.tensor("y").unwrap().shape, vec![1, 3456]);
        assert_eq!(macs_of(&g.nodes()[0], &g), 86_400);
        assert_eq!(macs_of(&g.nodes()[1], &g), 0);
        assert_eq!(op_cost(&g.nodes()[1], &g).elements, 3456);
    }

    #[test]
    fn reshape_size_mismatch() {
        let mut b = conv_builder();
        b.node_with("flat", OpKind::Reshape, &["c"], &["y"], Attrs::reshape(vec![1, 1000]));
        match b.build() {
            Err(ModelError::ShapeMismatch { node, .. }) => assert_eq!(node, "flat"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn declared_shape_must_agree() {
        let mut b = GraphBuilder::new("d");
        b.input("x", &[1, 16]).param_f32("w", &[8, 16], &[0.0; 128]);
        b.output("y");
        let mut g = b.clone();
        g.node("d", OpKind::Dense, &["x", "w"], &["y"]);
        assert!(g.build().is_ok());
        let doc = String::from_utf8(save_model(&g.build_raw().unwrap())).unwrap();
        let doc = doc.replacen(r#""kind": "output""#, r#""shape": [1, 9], "kind": "output""#, 1);
        let raw = load_model(doc.as_bytes()).unwrap();
        assert!(matches!(infer_shapes(&raw), Err(ModelError::ShapeMismatch { .. })));
    }

    #[test]
    fn dense_macs_single_input() {
        let mut b = GraphBuilder::new("d");
        b.input("x", &[1, 1]).param_f32("w", &[16, 1], &[0.0; 16]).output("y");
        b.node("d", OpKind::Dense, &["x", "w"], &["y"]);
        let g = b.build().unwrap();
        assert_eq!(macs_of(&g.nodes()[0], &g), 16);
    }

    #[test]
    fn rejects_quant_on_fp32_and_missing_blob() {
        let doc = relu_doc().replace(r#""kind": "input"}"#, r#""kind": "input", "scale": 0.5, "zero_point": 0}"#);
        assert!(matches!(load_model(doc.as_bytes()), Err(ModelError::Validation { .. })));

        let mut b = GraphBuilder::new("d");
        b.input("x", &[1, 2]).output("y");
        let mut raw = b.clone();
        raw.param_f32("w", &[2, 2], &[0.0; 3]);
        raw.node("d", OpKind::Dense, &["x", "w"], &["y"]);
        let err = raw.build_raw().unwrap_err();
        assert!(err.to_string().contains("blob is 12 bytes, tensor needs 16"), "{err}");
    }

    #[test]
    fn rejects_int8_graph_io() {
        let doc = relu_doc().replace(
            r#"{"id": "y", "dtype": "fp32", "kind": "output"}"#,
            r#"{"id": "y", "dtype": "int8", "kind": "output", "scale": 1.0, "zero_point": 0}"#,
        );
        let err = load_model(doc.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("fp32"), "{err}");
    }

    #[test]
    fn rejects_out_of_order_nodes() {
        let mut b = GraphBuilder::new("cyc");
        b.input("x", &[2]).fp32("a").output("y");
        b.node("second", OpKind::Relu, &["a"], &["y"]);
        b.node("first", OpKind::Relu, &["x"], &["a"]);
        let err = b.build_raw().unwrap_err();
        assert!(err.to_string().contains("not topological"), "{err}");
    }
}
