use std::collections::HashMap;

use proptest::prelude::*;
use utoe_core::model_ir::{
    load_model, macs_of, save_model, zoo, Attrs, GraphBuilder, ModelError, ModelGraph, OpKind, TensorSpec,
};
use utoe_testkit::graphs::{random_graph, GraphShape};
use utoe_testkit::rng;

fn rename(g: &ModelGraph, salt: u64) -> ModelGraph {
    let map: HashMap<String, String> = g
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.clone(), format!("v{salt}_{}", g.tensors().len() - i)))
        .collect();
    let tensors: Vec<TensorSpec> =
        g.tensors().iter().map(|t| TensorSpec { id: map[&t.id].clone(), ..t.clone() }).collect();
    let nodes = g
        .nodes()
        .iter()
        .map(|n| {
            let mut n = n.clone();
            n.inputs = n.inputs.iter().map(|i| map[i].clone()).collect();
            n.outputs = n.outputs.iter().map(|o| map[o].clone()).collect();
            n
        })
        .collect();
    let params = g.params().iter().map(|p| (map[&p.tensor].clone(), p.data.clone())).collect();
    ModelGraph::new(g.name(), tensors, nodes, params).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn save_then_load_is_identity(seed in any::<u64>()) {
        let g = random_graph(&mut rng(seed), GraphShape { max_ops: 12, ..Default::default() });
        let back = load_model(&save_model(&g)).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(save_model(&back), save_model(&g));
    }

    #[test]
    fn macs_ignore_tensor_names(seed in any::<u64>(), salt in any::<u64>()) {
        let g = random_graph(&mut rng(seed), GraphShape::default());
        let r = utoe_core::model_ir::infer_shapes(&rename(&g, salt)).unwrap();
        for (a, b) in g.nodes().iter().zip(r.nodes()) {
            prop_assert_eq!(macs_of(a, &g), macs_of(b, &r));
        }
    }

    #[test]
    fn a_back_edge_is_rejected(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let g = random_graph(&mut rng(seed), GraphShape { max_ops: 10, ..Default::default() });
        let nodes = g.nodes().to_vec();
        prop_assume!(nodes.len() >= 2);
        // rewire an input of some node to the output of a later node
        let i = pick.index(nodes.len() - 1);
        let j = i + 1 + (seed as usize) % (nodes.len() - i - 1);
        let mut bad = nodes.clone();
        bad[i].inputs[0] = nodes[j].outputs[0].clone();
        let params = g.params().iter().map(|p| (p.tensor.clone(), p.data.clone())).collect();
        let err = ModelGraph::new("cyclic", g.tensors().to_vec(), bad, params).unwrap_err();
        let is_order_error = matches!(&err, ModelError::Validation { message, .. } if message.contains("topological"));
        prop_assert!(is_order_error, "{}", err);
    }
}

/// Counts multiply-accumulates by walking the full loop nest.
fn conv_loop_nest(cout: usize, cin: usize, kh: usize, kw: usize, oh: usize, ow: usize) -> u64 {
    let mut n = 0;
    for _co in 0..cout {
        for _oy in 0..oh {
            for _ox in 0..ow {
                for _ci in 0..cin {
                    for _ky in 0..kh {
                        for _kx in 0..kw {
                            n += 1;
                        }
                    }
                }
            }
        }
    }
    n
}

#[test]
fn conv_macs_match_the_loop_nest() {
    let mut b = GraphBuilder::new("conv");
    b.input("x", &[1, 1, 28, 28]).output("y");
    b.param_f32("w", &[6, 1, 5, 5], &[0.0; 150]);
    b.node("c", OpKind::Conv2d, &["x", "w"], &["y"]);
    let g = b.build().unwrap();
    assert_eq!(macs_of(&g.nodes()[0], &g), 86_400);
    assert_eq!(conv_loop_nest(6, 1, 5, 5, 24, 24), 86_400);

    let mut r = rng(5);
    use rand::Rng;
    for _ in 0..50 {
        let (cin, cout) = (r.random_range(1..4), r.random_range(1..5));
        let (h, w) = (r.random_range(3..10), r.random_range(3..10));
        let (kh, kw) = (r.random_range(1..=3), r.random_range(1..=3));
        let stride = [r.random_range(1..3), r.random_range(1..3)];
        let mut b = GraphBuilder::new("conv");
        b.input("x", &[1, cin, h, w]).output("y");
        b.param_f32("w", &[cout, cin, kh, kw], &vec![0.0; cout * cin * kh * kw]);
        b.node_with("c", OpKind::Conv2d, &["x", "w"], &["y"], Attrs { stride: Some(stride), ..Default::default() });
        let g = b.build().unwrap();
        let y = g.tensor("y").unwrap();
        let expected = conv_loop_nest(cout, cin, kh, kw, (h - kh) / stride[0] + 1, (w - kw) / stride[1] + 1);
        assert_eq!(y.shape, vec![1, cout, (h - kh) / stride[0] + 1, (w - kw) / stride[1] + 1]);
        assert_eq!(macs_of(&g.nodes()[0], &g), expected);
    }
}

#[test]
fn zoo_models_round_trip() {
    for name in zoo::NAMES {
        let g = zoo::by_name(name).unwrap();
        assert_eq!(load_model(&save_model(&g)).unwrap(), g, "{name}");
    }
}
