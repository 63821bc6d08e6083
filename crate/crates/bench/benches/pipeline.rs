use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use utoe_core::boards::BoardRegistry;
use utoe_core::compiler::{compile_artifact, fuse_operators, plan_memory, CompileConfig};
use utoe_core::model_ir::zoo;
use utoe_core::rpc::{chunk_model, decode_stream, encode_frame, Message, DEFAULT_BUFFER_SIZE};
use utoe_core::worker::Executor;

fn codec(c: &mut Criterion) {
    let board = BoardRegistry::builtin().lookup("stm32f746g-disco").unwrap().clone();
    let image = compile_artifact(&zoo::lenet5(), &board, &CompileConfig::default()).unwrap().to_bytes();
    let stream: Vec<u8> = chunk_model(&image, DEFAULT_BUFFER_SIZE)
        .unwrap()
        .iter()
        .enumerate()
        .flat_map(|(i, m)| encode_frame(m, i as u16, DEFAULT_BUFFER_SIZE).unwrap())
        .collect();
    let record = Message::TrialRecord { trial_index: 7, latency_ns: 39_601_000 };
    c.bench_function("encode_trial_record", |b| b.iter(|| encode_frame(black_box(&record), 3, DEFAULT_BUFFER_SIZE)));
    c.bench_function("decode_lenet_image", |b| b.iter(|| decode_stream(black_box(&stream))));
}

fn compiler(c: &mut Criterion) {
    let g = zoo::lenet5();
    let board = BoardRegistry::builtin().lookup("stm32f746g-disco").unwrap().clone();
    c.bench_function("fuse_and_plan_lenet", |b| {
        b.iter(|| {
            let kernels = fuse_operators(black_box(&g));
            plan_memory(&g, &kernels, 0)
        })
    });
    c.bench_function("compile_lenet", |b| {
        b.iter(|| compile_artifact(black_box(&g), &board, &CompileConfig::default()))
    });
}

fn execution(c: &mut Criterion) {
    let board = BoardRegistry::builtin().lookup("stm32f746g-disco").unwrap().clone();
    for g in [zoo::sinus(), zoo::lenet5()] {
        let m = compile_artifact(&g, &board, &CompileConfig::default()).unwrap();
        let mut ex = Executor::new(&m, &vec![0; m.kernels.len()]);
        let mut trial = 0;
        c.bench_function(&format!("run_{}", g.name()), |b| {
            b.iter(|| {
                trial += 1;
                ex.fill_inputs(0, trial);
                ex.run()
            })
        });
    }
}

criterion_group!(benches, codec, compiler, execution);
criterion_main!(benches);
