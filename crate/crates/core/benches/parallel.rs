use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use wizbook::arena::{build_arena, ArenaOptions, SpecMonitor};
use wizbook::magicbook::{collect_dataset, fit_forest, fit_tree, FitOptions, Forest};
use wizbook::par::Exec;
use wizbook::policy::{pickups_per_episode, Chaser};
use wizbook::{Cell, GridConfig};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn rollouts(c: &mut Criterion) {
    let cfg = GridConfig::new(10, 3);
    let mut g = c.benchmark_group("rollouts");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("chaser_16x1000", name), |b| {
            b.iter(|| pickups_per_episode(exec, &cfg, &Chaser, 16, 1000, 0))
        });
    }
    g.finish();
}

fn forest(c: &mut Criterion) {
    let cfg = GridConfig::new(10, 3);
    let d = collect_dataset(Exec::Parallel, &cfg, &Chaser, 20, 1000, 0);
    let mut g = c.benchmark_group("fit_forest");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("rf5_depth10", name), |b| {
            b.iter(|| fit_forest(&d, &FitOptions::forest(5, Some(10), 0), exec).unwrap())
        });
    }
    g.finish();
}

fn arena(c: &mut Criterion) {
    let gas = Cell::new(0, 0);
    let cfg = GridConfig::new(6, 2).with_gas_station(gas);
    let d = collect_dataset(Exec::Parallel, &cfg, &Chaser, 10, 500, 0);
    let book = Forest::single(fit_tree(&d, Some(8)).unwrap());
    let mon = SpecMonitor::Timer { t: 8, gas };
    let mut g = c.benchmark_group("build_arena");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("6x6_k2_t8", name), |b| {
            b.iter(|| build_arena(&cfg, &mon, &book, &ArenaOptions::default(), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, rollouts, forest, arena);
criterion_main!(benches);
