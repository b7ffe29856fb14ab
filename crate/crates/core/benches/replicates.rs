//! Replicate throughput: rayon fan-out against the plain sequential loop.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use sctm::parallel::{map_range, map_range_sequential};
use sctm::scenario::{RuleConfig, Scenario, ScenarioConfig};

fn short_urban() -> Scenario {
    let mut cfg = ScenarioConfig::bundled("urban").expect("bundled urban");
    cfg.run.horizon = 200;
    Scenario::new(cfg, None).expect("valid scenario")
}

fn bench_replicates(c: &mut Criterion) {
    let s = short_urban();
    let k = s.design().default.clone();
    let measure = s.config().measure(None).unwrap().measure.clone();
    let mut group = c.benchmark_group("urban_replicates");
    group.sample_size(10);
    for rule in [RuleConfig::Dpf, RuleConfig::Cooperative] {
        let r = rule.build(s.network());
        let reps = 16u64;
        let run = |i: u64| s.statistic(&k, &r, &measure, 1, i).unwrap();
        group.bench_with_input(BenchmarkId::new("sequential", format!("{rule:?}")), &reps, |b, &n| {
            b.iter(|| black_box(map_range_sequential(0..n, run)))
        });
        group.bench_with_input(BenchmarkId::new("parallel", format!("{rule:?}")), &reps, |b, &n| {
            b.iter(|| black_box(map_range(0..n, run)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_replicates);
criterion_main!(benches);
