use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use tiledworld::grid::Accumulator;
use tiledworld::pipeline::{decode_tiled, IdentityDecoder};
use tiledworld::sampler::{aggregate, aggregate_reference};
use tiledworld::BlendMask;
use tiledworld_bench::{config, noise, point, terrain};

fn dense_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("dense_step");
    g.sample_size(10);
    let d = point();
    for dims in [[32, 32, 16], [64, 64, 16]] {
        let cfg = config(dims, 8, 16, 1);
        let sampler = cfg.sampler(&d).unwrap();
        let world = noise(dims, 8);
        g.throughput(Throughput::Elements(cfg.layout().unwrap().len() as u64));
        g.bench_with_input(BenchmarkId::from_parameter(format!("{dims:?}")), &world, |b, w| {
            b.iter(|| sampler.step(w, 0.5, 0.04).unwrap())
        });
    }
    g.finish();
}

fn sparse_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("sparse_step");
    g.sample_size(10);
    let d = point();
    let dims = [64, 64, 16];
    let cfg = config(dims, 8, 16, 1);
    let sampler = cfg.sampler(&d).unwrap();
    let world = terrain(dims, 8);
    g.throughput(Throughput::Elements(world.len() as u64));
    g.bench_function("terrain_64x64x16", |b| {
        b.iter(|| sampler.sparse_step(&world, 0.5, 0.04).unwrap())
    });
    g.finish();
}

fn aggregation(c: &mut Criterion) {
    let mut g = c.benchmark_group("aggregate");
    let cfg = config([48, 48, 16], 4, 16, 1);
    let layout = cfg.layout().unwrap();
    let mask = BlendMask::cosine(16);
    let n = 16 * 16 * 16 * 4;
    let updates: Vec<Vec<f32>> = (0..layout.len()).map(|i| vec![i as f32 * 0.1; n]).collect();
    g.bench_function("parallel", |b| {
        b.iter(|| aggregate(&layout, &mask, 4, &updates).unwrap())
    });
    g.bench_function("serial", |b| {
        b.iter(|| aggregate_reference(&layout, &mask, 4, &updates))
    });
    g.bench_function("accumulator", |b| {
        b.iter(|| {
            let mut acc = Accumulator::new(layout.dims(), 4);
            for (o, u) in layout.origins().iter().zip(&updates) {
                acc.scatter(u, &mask, *o).unwrap();
            }
            acc.resolve().unwrap()
        })
    });
    g.finish();
}

fn decode(c: &mut Criterion) {
    let world = noise([64, 64, 16], 8);
    c.bench_function("decode_identity_64x64x16", |b| {
        b.iter(|| decode_tiled(&world, &IdentityDecoder, 16).unwrap())
    });
}

criterion_group!(benches, dense_step, sparse_step, aggregation, decode);
criterion_main!(benches);
