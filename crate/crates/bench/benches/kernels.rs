use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fkpath::model::{ClassKind, ClassParams, FunctionClassTag, InputFn, Preset, ProblemSpec};
use fkpath::quantum::ae_outcome_distribution;
use fkpath::series::product_h;
use fkpath::smolyak::{build_sparse, precompute_cv_weights, BuildOptions, PrecomputeOptions};
use fkpath::{phi_rand, RngStream, SparseApprox};

fn bump_spec(d: usize) -> ProblemSpec {
    ProblemSpec::at_origin(
        d,
        1.0,
        InputFn::preset(Preset::GaussianBump {
            amplitude: 1.0,
            scale: 1.0,
        }),
        InputFn::preset(Preset::Constant { value: 0.25 }),
    )
    .unwrap()
}

fn build(spec: &ProblemSpec, k: usize, eps: f64) -> SparseApprox {
    let params = ClassParams::smooth(spec.d, 1, 1.0, 0.25);
    let class = FunctionClassTag::new(ClassKind::Custom, 1.0);
    let (v, pot, d) = (spec.v.clone(), spec.potential.clone(), spec.d);
    build_sparse(
        move |z: &[f64]| product_h(&v, &pot, z, d),
        eps,
        k,
        d,
        1.0,
        &class,
        &params,
        &BuildOptions::default(),
    )
    .unwrap()
}

fn sparse_build(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_sparse");
    g.sample_size(10);
    for (d, k, eps) in [(1, 0, 0.01), (1, 1, 0.02), (2, 1, 0.05)] {
        let spec = bump_spec(d);
        g.bench_with_input(BenchmarkId::from_parameter(format!("d{d}_k{k}_eps{eps}")), &eps, |b, &eps| {
            b.iter(|| build(&spec, k, eps))
        });
    }
    g.finish();
}

fn residual_estimate(c: &mut Criterion) {
    let spec = bump_spec(1);
    let mut approx = build(&spec, 1, 0.02);
    precompute_cv_weights(&mut approx, 1.0, 1e-3, &PrecomputeOptions::default()).unwrap();
    let mut g = c.benchmark_group("phi_rand");
    for m in [1_000usize, 10_000] {
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| phi_rand(&spec, &approx, m, &RngStream::new(black_box(1), 1)).unwrap())
        });
    }
    g.finish();
}

fn ae_distribution(c: &mut Criterion) {
    let mut g = c.benchmark_group("ae_outcome_distribution");
    for m in [64usize, 1024, 16384] {
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| ae_outcome_distribution(black_box(0.3), m))
        });
    }
    g.finish();
}

criterion_group!(benches, sparse_build, residual_estimate, ae_distribution);
criterion_main!(benches);
