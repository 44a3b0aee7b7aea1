use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use ceg_core::ceg::{generate_sequence, GenerationConfig};
use ceg_core::classical::{ClassicalModel, IntensityBound};
use ceg_core::kde::{KdeConfig, SampleCloud};
use ceg_core::nets::{Architecture, CegModel, Standardization};
use ceg_core::StreamKey;
use rand::Rng as _;
use rand_distr::Exp1;

fn generation(c: &mut Criterion) {
    let model = CegModel::init(
        Architecture::new(0),
        Standardization::identity(0),
        false,
        StreamKey::new(1),
    )
    .unwrap();
    let mut group = c.benchmark_group("generate_sequence");
    for n in [100usize, 1_000, 10_000] {
        let cfg = GenerationConfig {
            horizon: 1e12,
            max_events: n,
            ..GenerationConfig::default()
        };
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &cfg, |b, cfg| {
            b.iter(|| generate_sequence(&model, cfg, &mut StreamKey::new(2).rng()).unwrap())
        });
    }
    group.finish();
}

fn thinning(c: &mut Criterion) {
    let mut group = c.benchmark_group("thinning");
    let se = ClassicalModel::SelfExciting { mu: 0.1, beta: 0.1 };
    group.bench_function("self_exciting_T100", |b| {
        b.iter(|| {
            se.thinning_simulate(100.0, IntensityBound::Adaptive, &mut StreamKey::new(3).rng())
                .unwrap()
        })
    });
    let poisson = ClassicalModel::Poisson { rate: 50.0 };
    for bound in [100.0, 400.0, 1600.0] {
        group.bench_with_input(BenchmarkId::new("poisson_bound", bound), &bound, |b, &bound| {
            b.iter(|| {
                poisson
                    .thinning_simulate(20.0, IntensityBound::Constant(bound), &mut StreamKey::new(4).rng())
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn kde(c: &mut Criterion) {
    let mut group = c.benchmark_group("kde");
    for l in [100usize, 1_000] {
        let mut rng = StreamKey::new(5).rng();
        let samples: Vec<f64> = (0..l).map(|_| rng.sample(Exp1)).collect();
        group.bench_with_input(BenchmarkId::new("build", l), &samples, |b, s| {
            b.iter(|| SampleCloud::from_samples(s.clone(), 1, &KdeConfig::default()).unwrap())
        });
        let cloud = SampleCloud::from_samples(samples, 1, &KdeConfig::default()).unwrap();
        group.bench_with_input(BenchmarkId::new("pdf_cdf", l), &cloud, |b, cloud| {
            b.iter(|| {
                (
                    cloud.pdf_time(black_box(0.7)).unwrap(),
                    cloud.cdf_time(black_box(0.7)).unwrap(),
                )
            })
        });
    }
    group.finish();
}

criterion_group!(benches, generation, thinning, kde);
criterion_main!(benches);
