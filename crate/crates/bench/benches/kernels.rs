use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mcsa_bench::fixture;
use mcsa_core::estimators::step;
use mcsa_core::kernels::{cis_step, discrete_transition_matrix, imh_step, DiscreteKernel};
use mcsa_core::{stream_rng, ChainState, EstimatorContext, KernelContext, Method};

fn kernels(c: &mut Criterion) {
    let (target, _, proposal) = fixture(20);
    let ctx = KernelContext::new(&target, &proposal).unwrap();
    let mut group = c.benchmark_group("kernel");
    for n in [8, 64] {
        group.bench_with_input(BenchmarkId::new("cis_step", n), &n, |b, &n| {
            let mut rng = stream_rng(1, &[]);
            let mut z = target.sample(&mut rng);
            b.iter(|| z = cis_step(&ctx, &z, n, &mut rng).unwrap().next_state);
        });
    }
    group.bench_function("imh_step", |b| {
        let mut rng = stream_rng(2, &[]);
        let mut z = target.sample(&mut rng);
        b.iter(|| z = imh_step(&ctx, &z, &mut rng).next_state);
    });
    group.finish();
}

fn estimators(c: &mut Criterion) {
    let (target, params, proposal) = fixture(20);
    let ctx = EstimatorContext::new(&target, &proposal, &params).unwrap();
    let mut group = c.benchmark_group("estimator");
    for method in Method::ALL {
        for n in [8, 64] {
            group.bench_with_input(BenchmarkId::new(method.name(), n), &n, |b, &n| {
                let mut rng = stream_rng(3, &[n as u64]);
                let mut state = ChainState::init(method, &proposal, n, &mut rng).unwrap();
                b.iter(|| step(&ctx, &mut state, n, &mut rng).unwrap());
            });
        }
    }
    group.finish();
}

fn discrete_oracle(c: &mut Criterion) {
    let g = 21;
    let target: Vec<f64> = (1..=g).map(|i| i as f64).collect();
    let total: f64 = target.iter().sum();
    let target: Vec<f64> = target.iter().map(|p| p / total).collect();
    let proposal = vec![1.0 / g as f64; g];
    c.bench_function("discrete_cis_exact_n3", |b| {
        b.iter(|| discrete_transition_matrix(DiscreteKernel::Cis { num_proposals: 3 }, &target, &proposal).unwrap())
    });
}

criterion_group!(benches, kernels, estimators, discrete_oracle);
criterion_main!(benches);
