use std::hint::black_box;

use cavshape_core::assembly::{assemble, build_space, SpaceKind};
use cavshape_core::eigen::solve_gevp;
use cavshape_core::splines::{eval_nurbs_basis, NurbsNet};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn basis(c: &mut Criterion) {
    let net = NurbsNet::rectangle(1.0, 2.0).unwrap();
    c.bench_function("nurbs basis with first derivatives", |b| {
        b.iter(|| eval_nurbs_basis(&net, black_box(&[0.37, 0.61]), 1).unwrap())
    });
}

fn assembly(c: &mut Criterion) {
    let net = NurbsNet::rectangle(1.0, 2.0).unwrap();
    let mut g = c.benchmark_group("assemble");
    for (kind, name) in [(SpaceKind::ScalarH1Dirichlet, "scalar"), (SpaceKind::CurlConforming, "curl")] {
        for level in [2, 3] {
            let space = build_space(&net, kind, 2, level).unwrap();
            g.bench_with_input(BenchmarkId::new(name, level), &space, |b, s| b.iter(|| assemble(s, &net).unwrap()));
        }
    }
    g.finish();
}

fn gevp(c: &mut Criterion) {
    let net = NurbsNet::rectangle(1.0, 2.0).unwrap();
    let mut g = c.benchmark_group("gevp");
    g.sample_size(20);
    for level in [2, 3] {
        let sys = assemble(&build_space(&net, SpaceKind::ScalarH1Dirichlet, 2, level).unwrap(), &net).unwrap();
        g.bench_with_input(BenchmarkId::new("scalar", level), &sys, |b, s| b.iter(|| solve_gevp(s, 6).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, basis, assembly, gevp);
criterion_main!(benches);
