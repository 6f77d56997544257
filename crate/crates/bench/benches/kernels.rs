use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use transience_bench::{birth_death, birth_death_kernel};
use transience_core::firstreturn::return_table;
use transience_core::minsolve::{solve_minimal, MonotoneFixedPointProblem};
use transience_core::skipfree::f_table;
use transience_core::StateSet;

fn bench_return_table(c: &mut Criterion) {
    let mut group = c.benchmark_group("return_table");
    let set = StateSet::singleton(0);
    for n in [100, 400] {
        let kernel = birth_death_kernel(2.0 / 3.0, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| return_table(black_box(&kernel), &set, n))
        });
    }
    group.finish();
}

fn bench_f_table(c: &mut Criterion) {
    let mut group = c.benchmark_group("f_table");
    let spec = birth_death(2.0 / 3.0);
    for n in [40, 200] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| f_table(black_box(&spec), n).unwrap())
        });
    }
    group.finish();
}

fn bench_solve_minimal(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_minimal");
    let set = StateSet::singleton(0);
    for n in [100, 400] {
        let kernel = birth_death_kernel(2.0 / 3.0, n);
        let problem = MonotoneFixedPointProblem::taboo(&kernel, &set, 1.05, vec![1.0; n]).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &problem, |b, p| {
            b.iter(|| solve_minimal(black_box(p)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_return_table, bench_f_table, bench_solve_minimal);
criterion_main!(benches);
