use utoe_core::boards::{BoardRegistry, BoardSpec};
use utoe_core::compiler::{compile_artifact, CompileConfig, DeployableModel};
use utoe_core::model_ir::{zoo, ModelGraph};
use utoe_core::worker::Executor;
use utoe_testkit::graphs::{random_graph, GraphShape};
use utoe_testkit::quant::random_quant_case;
use utoe_testkit::rng;

fn big_board() -> BoardSpec {
    let mut b = BoardRegistry::builtin().lookup("stm32f746g-disco").unwrap().clone();
    b.ram_bytes = 1 << 30;
    b.flash_bytes = 1 << 30;
    b
}

fn compile(g: &ModelGraph, fuse: bool) -> DeployableModel {
    let config = CompileConfig { fuse, ..Default::default() };
    compile_artifact(g, &big_board(), &config).unwrap()
}

fn run(model: &DeployableModel, seed: u64, trial: u64) -> Vec<Vec<u32>> {
    let mut ex = Executor::new(model, &vec![0; model.kernels.len()]);
    ex.fill_inputs(seed, trial);
    ex.run();
    ex.outputs().into_iter().map(|o| o.into_iter().map(f32::to_bits).collect()).collect()
}

#[test]
fn fused_and_unfused_random_graphs_agree_bitwise() {
    let mut r = rng(0xF05E);
    let mut fused_somewhere = 0;
    for i in 0..80 {
        let g = random_graph(&mut r, GraphShape::default());
        let fused = compile(&g, true);
        let plain = compile(&g, false);
        assert_eq!(plain.kernels.len(), g.nodes().len());
        if fused.kernels.len() < plain.kernels.len() {
            fused_somewhere += 1;
        }
        for seed in 0..10 {
            assert_eq!(run(&fused, seed, 0), run(&plain, seed, 0), "graph {i} seed {seed}");
        }
    }
    assert!(fused_somewhere >= 40, "only {fused_somewhere} graphs had any fusion");
}

#[test]
fn sinus_fused_matches_unfused_over_100_seeds() {
    let g = zoo::sinus();
    let (fused, plain) = (compile(&g, true), compile(&g, false));
    assert_eq!(fused.kernels.len(), 3);
    for seed in 0..100 {
        assert_eq!(run(&fused, seed, 3), run(&plain, seed, 3));
    }
}

#[test]
fn lenet_fused_matches_unfused() {
    let g = zoo::lenet5();
    let (fused, plain) = (compile(&g, true), compile(&g, false));
    for seed in 0..5 {
        assert_eq!(run(&fused, seed, 0), run(&plain, seed, 0));
    }
}

#[test]
fn int8_layers_stay_within_the_quantization_bound() {
    let mut r = rng(0x1A7);
    let (mut convs, mut worst) = (0, 0.0f64);
    for case_no in 0..150 {
        let case = random_quant_case(&mut r);
        convs += case.conv as usize;
        for fuse in [true, false] {
            let m = compile(&case.graph, fuse);
            let mut ex = Executor::new(&m, &vec![0; m.kernels.len()]);
            ex.set_input(0, &case.input);
            ex.run();
            let y = ex.output(0);
            assert_eq!(y.len(), case.reference.len());
            for (j, ((&got, &want), &bound)) in y.iter().zip(&case.reference).zip(&case.bound).enumerate() {
                let err = (got as f64 - want).abs();
                assert!(err <= bound, "case {case_no} element {j}: |{got} - {want}| = {err} > {bound}");
                worst = worst.max(err / bound);
            }
        }
    }
    assert!((40..=110).contains(&convs), "{convs} conv cases");
    // the bound is not vacuous
    assert!(worst > 0.05, "worst error ratio {worst}");
}
