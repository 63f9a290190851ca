use std::hint::black_box;

use bqrnn_bench::fixture;
use bqrnn_core::baselines::qrnn_loss_and_gradient;
use bqrnn_core::{
    fit_linear_qr, gig_half, run_chain, ChainConfig, GigParams, Priors, QrOptions, QuantileSpec, RngStream,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn gig(c: &mut Criterion) {
    let mut group = c.benchmark_group("gig_half");
    group.throughput(Throughput::Elements(1000));
    for (r1, r2) in [(0.5, 2.0), (1.0, 1.0), (2.0, 0.5)] {
        let p = GigParams::new(r1, r2).unwrap();
        let mut rng = RngStream::new(1, 0);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{r1}_{r2}")), &p, |b, &p| {
            b.iter(|| (0..1000).map(|_| gig_half(&mut rng, p)).sum::<f64>())
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("gibbs_sweeps");
    let sweeps = 50;
    group.throughput(Throughput::Elements(sweeps as u64));
    for (n, k) in [(160, 4), (400, 8)] {
        let (data, init) = fixture(n, k);
        let priors = Priors::defaults(k, data.p());
        let spec = QuantileSpec::new(0.5).unwrap();
        let config = ChainConfig {
            n_iter: sweeps,
            burn_in_fraction: 0.0,
            thin: 1,
            ..ChainConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(format!("n{n}_k{k}")), |b| {
            b.iter(|| run_chain(&data, &priors, &spec, &config, black_box(&init)).unwrap())
        });
    }
    group.finish();
}

fn baselines(c: &mut Criterion) {
    let (data, init) = fixture(400, 4);
    let spec = QuantileSpec::new(0.9).unwrap();
    c.bench_function("qrnn_loss_and_gradient/n400_k4", |b| {
        b.iter(|| qrnn_loss_and_gradient(black_box(&init), data.x(), data.y(), &spec, 1e-3))
    });
    c.bench_function("linear_qr/n400", |b| {
        b.iter(|| fit_linear_qr(black_box(&data), &spec, &QrOptions::default()).unwrap())
    });
}

criterion_group!(benches, gig, sweep, baselines);
criterion_main!(benches);
