use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dinebench::metrics::gini;
use dinebench::runner::{run_episode, PolicySpec, RunConfig};
use dinebench::table::{Action, Decision, TableState};
use dinebench::PolicyKind;

fn step(c: &mut Criterion) {
    let mut group = c.benchmark_group("apply_simultaneous");
    for n in [3usize, 5, 16, 64] {
        let table = TableState::new(n).unwrap();
        let decisions: Vec<Decision> = (0..n)
            .map(|i| {
                Decision::new(if i % 2 == 0 {
                    Action::GrabLeft
                } else {
                    Action::GrabRight
                })
            })
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| table.apply_simultaneous(black_box(&decisions)).unwrap())
        });
    }
    group.finish();
}

fn episode(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_episode");
    for code in ["sim5nc", "seq5c"] {
        for kind in [
            PolicyKind::Dijkstra,
            PolicyKind::Random,
            PolicyKind::Announce,
        ] {
            let cfg = RunConfig::new(code.parse().unwrap(), PolicySpec::Uniform(kind));
            group.bench_function(format!("{code}/{kind}"), |b| {
                b.iter(|| {
                    let mut policies = cfg.build_policies().unwrap();
                    run_episode(&cfg, 0, &mut policies).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn fairness(c: &mut Criterion) {
    let meals: Vec<u32> = (0..64).map(|i| (i * 37 % 51) as u32).collect();
    c.bench_function("gini/64", |b| b.iter(|| gini(black_box(&meals)).unwrap()));
}

criterion_group!(benches, step, episode, fairness);
criterion_main!(benches);
