use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use synergy_core::*;

fn metrics(c: &mut Criterion) {
    let spec = MetricSpec::new("accuracy", Direction::HigherBetter, 0.0, Some(1.0)).unwrap();
    let triple = PerformanceTriple::new(0.57, 0.50, 0.78, spec);
    c.bench_function("compute_rho_hat/transformed", |b| b.iter(|| compute_rho_hat(black_box(&triple), true).unwrap()));
}

fn intervals(c: &mut Criterion) {
    let x = SampleSummary::new(50, 1.2, 0.5).unwrap();
    let y = SampleSummary::new(50, 1.0, 0.5).unwrap();
    let mut group = c.benchmark_group("ratio_ci");
    for method in [CiMethod::Fieller, CiMethod::Delta, CiMethod::Recommended] {
        group.bench_function(format!("{method:?}"), |b| {
            b.iter(|| ratio_ci(black_box(&x), black_box(&y), method, Design::Paired { r: 0.4 }, 0.95).unwrap())
        });
    }
    group.finish();
}

fn regression(c: &mut Criterion) {
    let data = generate(&SimConfig { base_seed: 7, ..SimConfig::default() }).unwrap();
    let mut group = c.benchmark_group("fit");
    group.bench_function("lmm_ml_97_subjects", |b| b.iter(|| fit_lmm(black_box(&data), FitMethod::ML).unwrap()));
    group.bench_function("lmm_reml_97_subjects", |b| b.iter(|| fit_lmm(black_box(&data), FitMethod::REML).unwrap()));
    group.bench_function("ols_97_subjects", |b| b.iter(|| fit_ols(black_box(&data)).unwrap()));
    group.finish();
}

fn review(c: &mut Criterion) {
    let records = bundled_dataset();
    c.bench_function("review/audit_79_rows", |b| b.iter(|| audit_dataset(black_box(&records)).unwrap()));
    c.bench_function("review/summarize", |b| {
        b.iter(|| summarize(black_box(&records), Selection::PublishedRhoHat, 0.05).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let cfg = SimConfig::default();
    c.bench_function("simulator/generate_97_subjects", |b| b.iter(|| generate(black_box(&cfg)).unwrap()));
    let small = SimConfig { n_subjects: 40, ..SimConfig::default() };
    let mut group = c.benchmark_group("simulator/recovery_20_reps");
    group.sample_size(10);
    for est in [Estimator::RatioOfMeans, Estimator::Lmm] {
        group.bench_function(format!("{est:?}"), |b| b.iter(|| recovery_study(&small, est, 20).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, metrics, intervals, regression, review, simulation);
criterion_main!(benches);
