use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dhen_bench::{bench_batch, bench_network};
use dhen_core::ensemble::DhenModel;
use dhen_core::sharding::{lpt_place, slice_tables, CostWeights, TableSpec};
use dhen_core::sim::{simulate_iteration, ClusterSpec, DenseModelProfile, ParadigmKind, ParadigmSpec};
use dhen_core::tape::{ParamStore, Tape};
use dhen_core::tensor::Tensor;
use dhen_core::training::{Adam, TrainConfig};

fn tensor_ops(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = Tensor::new(vec![64, 64], a).unwrap();
    let b = Tensor::new(vec![64, 64], b).unwrap();

    c.bench_function("matmul_64x64_fwd_bwd", |bench| {
        bench.iter_batched(
            ParamStore::new,
            |mut store| {
                let pa = store.add("a", a.clone());
                let pb = store.add("b", b.clone());
                let mut tape = Tape::new();
                let na = tape.param(&store, pa);
                let nb = tape.param(&store, pb);
                let y = tape.matmul(na, nb).unwrap();
                let loss = tape.sum_all(y);
                tape.backward(loss, &mut store).unwrap();
            },
            BatchSize::SmallInput,
        )
    });
}

fn training_step(c: &mut Criterion) {
    let spec = bench_network();
    let batch = bench_batch(128);
    let labels = vec![1.0; 128];
    let cfg = TrainConfig {
        batch_size: 128,
        steps: 1,
        learning_rate: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
        eval_cadence: 1,
        seed: 0,
    };

    c.bench_function("train_step_batch128", |bench| {
        bench.iter_batched(
            || {
                let model = DhenModel::init(&spec, 3).unwrap();
                let adam = Adam::new(&model.store, &cfg);
                (model, adam)
            },
            |(mut model, mut adam)| {
                let mut tape = Tape::new();
                let probs = model.forward(&mut tape, &batch).unwrap();
                let loss = tape.bce_mean(probs, &labels).unwrap();
                model.store.zero_grad();
                tape.backward(loss, &mut model.store).unwrap();
                adam.step(&mut model.store);
            },
            BatchSize::SmallInput,
        )
    });
}

fn planner(c: &mut Criterion) {
    let tables: Vec<TableSpec> = (0..200)
        .map(|i| TableSpec {
            name: format!("t{i}"),
            rows: 100_000 + i * 1000,
            cols: 32 + (i % 7) * 16,
            dtype_bytes: 4,
            pooled_lookups: 1.0 + (i % 3) as f64,
        })
        .collect();
    let weights = CostWeights::unit();
    let shards = slice_tables(&tables, 128, 1024.0, &weights).unwrap();

    c.bench_function("lpt_place_200_tables_128_devices", |bench| {
        bench.iter(|| lpt_place(std::hint::black_box(&shards), 128).unwrap())
    });
}

fn simulator(c: &mut Criterion) {
    let spec = bench_network();
    let profile = DenseModelProfile::from_network(&spec).unwrap();
    let cluster = ClusterSpec::default();
    let plan = lpt_place(&[], 128).unwrap();
    let paradigm = ParadigmSpec::new(ParadigmKind::Hsdp);

    c.bench_function("simulate_iteration_hsdp", |bench| {
        bench.iter(|| {
            simulate_iteration(
                std::hint::black_box(&paradigm),
                std::hint::black_box(&profile),
                &cluster,
                &plan,
                65536.0,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, tensor_ops, training_step, planner, simulator);
criterion_main!(benches);
