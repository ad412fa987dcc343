use causalgp::dataset::SplitPlan;
use causalgp::empirical_bayes::{cross_validated_risk, information_objective};
use causalgp::gp_engine::fit_posterior;
use causalgp::kernels::Smoothness;
use causalgp::synthgen::gp_draw_surface;
use causalgp_bench::{toy_data, type_two_prior};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn posterior(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit_posterior");
    for n in [100, 300, 600] {
        let data = toy_data(n, 3);
        let prior = type_two_prior(3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| fit_posterior(&prior, &data).unwrap()));
    }
    g.finish();
}

fn objective(c: &mut Criterion) {
    let data = toy_data(300, 3);
    let prior = type_two_prior(3);
    c.bench_function("information_objective/300", |b| b.iter(|| information_objective(&prior, &data, &data).unwrap()));
    let split = SplitPlan::k_fold((0..data.len()).collect(), &data.treatments, 5, 0).unwrap();
    c.bench_function("cross_validated_risk/300x5", |b| b.iter(|| cross_validated_risk(&prior, &data, &split).unwrap()));
}

fn surfaces(c: &mut Criterion) {
    c.bench_function("gp_draw_surface/64x64", |b| {
        b.iter(|| gp_draw_surface(Smoothness::ThreeHalves, 0.2, 1.0, &[0, 1], 64, 3).unwrap())
    });
}

criterion_group!(benches, posterior, objective, surfaces);
criterion_main!(benches);
