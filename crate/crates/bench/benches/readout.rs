use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dispsharp::objective::grad_uncertainty_wrt_cost;
use dispsharp::{anisotropic_softmax, readout, uncertainty_map, Temperature, UncertaintyMetric};
use dispsharp_bench::random_volume;
use std::hint::black_box;

fn bench_readout(c: &mut Criterion) {
    let vol = random_volume(96, 128, 32, 1);
    let t = Temperature::new(16.0).unwrap();
    c.bench_function("readout 128x96x33", |b| b.iter(|| readout(black_box(&vol), t)));

    let probs = anisotropic_softmax(&vol, t);
    let mut group = c.benchmark_group("uncertainty 128x96x33");
    for metric in UncertaintyMetric::all(0.5) {
        group.bench_with_input(BenchmarkId::from_parameter(metric.name()), &metric, |b, m| {
            b.iter(|| uncertainty_map(black_box(&probs), *m).unwrap())
        });
    }
    group.finish();

    c.bench_function("entropy gradient 128x96x33", |b| {
        b.iter(|| grad_uncertainty_wrt_cost(black_box(&vol), UncertaintyMetric::Entropy, t))
    });
}

criterion_group!(benches, bench_readout);
criterion_main!(benches);
