use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use xinggan_core::tensor::linalg::{gemm, Trans};
use xinggan_core::xing::{init_sa_block, sa_block, FeatureCode, SaBlockParams};
use xinggan_core::{Binder, Graph, ParamStore, SeedRng};

fn gemm_shapes(c: &mut Criterion) {
    let mut group = c.benchmark_group("gemm");
    for &(m, k, n) in &[(64usize, 54usize, 4096usize), (128, 576, 1024), (512, 2304, 64), (512, 2304, 8)] {
        let a = vec![0.5f32; m * k];
        let b = vec![0.25f32; k * n];
        let mut out = vec![0f32; m * n];
        group.bench_with_input(BenchmarkId::from_parameter(format!("{m}x{k}x{n}")), &(), |bench, _| {
            bench.iter(|| gemm(m, k, n, black_box(&a), Trans::No, black_box(&b), Trans::No, &mut out, false))
        });
    }
    group.finish();
}

fn conv(c: &mut Criterion) {
    let mut rng = SeedRng::new(3);
    let w = rng.uniform_tensor::<f32>(&[128, 64, 3, 3], -0.1, 0.1);
    let mut group = c.benchmark_group("conv2d_fwd_bwd");
    for batch in [1usize, 8] {
        let x = rng.uniform_tensor::<f32>(&[batch, 64, 32, 16], -1.0, 1.0);
        group.bench_with_input(BenchmarkId::from_parameter(batch), &batch, |bench, _| {
            bench.iter(|| {
                let g = Graph::new();
                let y = g.param(x.clone()).conv2d(g.param(w.clone()), None, 2, 1).unwrap();
                y.mean().backward().unwrap();
            })
        });
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let mut rng = SeedRng::new(5);
    let mut store = ParamStore::<f32>::new();
    init_sa_block(&mut store, "sa", 64, &mut rng);
    let app = rng.uniform_tensor::<f32>(&[64, 16, 8], -1.0, 1.0);
    let shape = rng.uniform_tensor::<f32>(&[64, 16, 8], -1.0, 1.0);
    c.bench_function("sa_block_fwd_bwd_c64_16x8", |bench| {
        bench.iter(|| {
            let g = Graph::new();
            let b = Binder::new(&g, &store, true);
            let p = SaBlockParams::bind(&b, "sa").unwrap();
            let out = sa_block(
                FeatureCode::appearance(g.param(app.clone())),
                FeatureCode::shape(g.param(shape.clone())),
                &p,
            )
            .unwrap();
            out.map.mean().backward().unwrap();
        })
    });
}

criterion_group!(benches, gemm_shapes, conv, attention);
criterion_main!(benches);
