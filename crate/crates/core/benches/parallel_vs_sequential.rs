use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use yume_kit::flow::GaussianMixture;
use yume_kit::par::{map_range_with, Exec};
use yume_kit::sampler::{euler_ode_sample, initial_noise, NfeCounter, TimeSchedule};

fn mixture() -> GaussianMixture {
    GaussianMixture::new(vec![
        (0.4, vec![-1.5, 0.0], vec![vec![0.3, 0.0], vec![0.0, 0.3]]),
        (0.6, vec![1.5, 0.5], vec![vec![0.2, 0.05], vec![0.05, 0.4]]),
    ])
    .unwrap()
}

fn euler_batch(c: &mut Criterion) {
    let g = mixture();
    let sched = TimeSchedule::uniform(50).unwrap();
    let mut group = c.benchmark_group("euler_50_steps");
    group.sample_size(10);
    for n in [256usize, 2048] {
        for exec in [Exec::Sequential, Exec::Parallel] {
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), n), &n, |b, &n| {
                b.iter(|| {
                    map_range_with(exec, n, |seed| {
                        let z = initial_noise(seed as u64, 2);
                        euler_ode_sample(&g, &sched, &z, &mut NfeCounter::new()).unwrap()
                    })
                })
            });
        }
    }
    group.finish();
}

fn oracle_batch(c: &mut Criterion) {
    let g = mixture();
    let points: Vec<Vec<f64>> = (0..4096).map(|s| initial_noise(s, 2)).collect();
    let mut group = c.benchmark_group("oracle_velocity");
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| {
                map_range_with(exec, points.len(), |i| {
                    g.oracle_velocity(black_box(&points[i]), 0.5).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, euler_batch, oracle_batch);
criterion_main!(benches);
