use proptest::prelude::*;
use utoe_core::compiler::{
    blocks_for, fuse_operators, is_valid_packing, liveness_lower_bound, pack_blocks, plan_memory, Block,
};
use utoe_core::model_ir::{GraphBuilder, OpKind};
use utoe_testkit::graphs::{random_fp32_dag, random_graph, GraphShape};
use utoe_testkit::packing::{optimal_arena, peak_live, random_blocks, search_space};
use utoe_testkit::rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn small_block_sets_are_packed_optimally(seed in any::<u64>(), n in 1usize..=6, horizon in 1usize..=6) {
        let blocks = random_blocks(&mut rng(seed), n, horizon);
        let (offsets, arena) = pack_blocks(&blocks);
        prop_assert!(is_valid_packing(&blocks, &offsets));
        prop_assert_eq!(arena, optimal_arena(&blocks));
        prop_assert_eq!(liveness_lower_bound(&blocks), peak_live(&blocks));
    }

    #[test]
    fn large_block_sets_stay_within_bounds(seed in any::<u64>(), n in 7usize..=40) {
        let blocks = random_blocks(&mut rng(seed), n, 12);
        let (offsets, arena) = pack_blocks(&blocks);
        prop_assert!(is_valid_packing(&blocks, &offsets));
        prop_assert!(peak_live(&blocks) <= arena);
        prop_assert!(arena <= blocks.iter().map(|b| b.size).sum());
        prop_assert!(offsets.iter().zip(&blocks).all(|(o, b)| o + b.size <= arena));
    }
}

#[test]
fn seven_and_eight_blocks_reach_the_optimum() {
    let mut r = rng(0xB10C);
    let mut checked = 0;
    while checked < 30 {
        let n = 7 + checked % 2;
        let blocks = random_blocks(&mut r, n, 6);
        if search_space(&blocks) > 400_000 {
            continue;
        }
        let (offsets, arena) = pack_blocks(&blocks);
        assert!(is_valid_packing(&blocks, &offsets));
        assert_eq!(arena, optimal_arena(&blocks), "{blocks:?}");
        checked += 1;
    }
}

#[test]
fn graphs_with_few_intermediates_get_optimal_arenas() {
    let mut r = rng(0xDA6);
    let mut checked = 0;
    for i in 0..2000 {
        let g = random_fp32_dag(&mut r, 1 + i % 6);
        let kernels = fuse_operators(&g);
        let blocks: Vec<Block> = blocks_for(&g, &kernels).into_iter().map(|(_, b)| b).collect();
        let plan = plan_memory(&g, &kernels, 0);
        assert!(plan.arena_bytes >= peak_live(&blocks));
        if search_space(&blocks) <= 2_000_000 {
            assert_eq!(plan.arena_bytes, optimal_arena(&blocks), "graph {i}: {blocks:?}");
            checked += 1;
        }
        if checked >= 250 {
            break;
        }
    }
    assert!(checked >= 200, "only {checked} graphs were small enough");
}

#[test]
fn random_model_plans_are_valid() {
    let mut r = rng(77);
    for _ in 0..300 {
        let g = random_graph(&mut r, GraphShape { max_ops: 14, ..Default::default() });
        let kernels = fuse_operators(&g);
        let owned = blocks_for(&g, &kernels);
        let blocks: Vec<Block> = owned.iter().map(|(_, b)| *b).collect();
        let plan = plan_memory(&g, &kernels, 4096);
        let total: u64 = blocks.iter().map(|b| b.size).sum();
        assert!(peak_live(&blocks) <= plan.arena_bytes && plan.arena_bytes <= total);
        assert_eq!(plan.total_memory_bytes, plan.arena_bytes + 4096);
        let (offsets, _) = pack_blocks(&blocks);
        assert!(is_valid_packing(&blocks, &offsets));
    }
}

#[test]
fn diamond_graph() {
    // producer -> two consumers -> joiner
    let mut b = GraphBuilder::new("diamond");
    b.input("x", &[1, 16]).fp32("a").fp32("l").fp32("r").output("y");
    let w: Vec<f32> = (0..32 * 16).map(|i| (i % 7) as f32 - 3.0).collect();
    b.param_f32("w", &[32, 16], &w).param_f32("w2", &[32, 16], &w);
    b.node("p", OpKind::Relu, &["x"], &["a"]);
    b.node("c1", OpKind::Dense, &["a", "w"], &["l"]);
    b.node("c2", OpKind::Dense, &["a", "w2"], &["r"]);
    b.node("j", OpKind::Add, &["l", "r"], &["y"]);
    let g = b.build().unwrap();
    let kernels = fuse_operators(&g);
    let blocks: Vec<Block> = blocks_for(&g, &kernels).into_iter().map(|(_, b)| b).collect();
    let sizes: Vec<u64> = {
        let mut s: Vec<u64> = blocks.iter().map(|b| b.size).collect();
        s.sort_unstable();
        s
    };
    // the joiner fuses into the second consumer, so `r` never reaches the arena
    assert_eq!(sizes, vec![64, 64, 128, 128]);
    let plan = plan_memory(&g, &kernels, 0);
    assert_eq!(plan.arena_bytes, optimal_arena(&blocks));
}
