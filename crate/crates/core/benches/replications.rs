use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ordgee::simulation::{run_study, Arm, Scenario, Study};
use ordgee::Execution;

fn small_study() -> Study {
    let scenario = Scenario {
        n: 120,
        reps: 8,
        seed: 3,
        ..Scenario::default()
    };
    Study::new(
        scenario,
        vec![Arm::complete(), Arm::wgee(true), Arm::drgee(true, true)],
        vec!["corr:ind".parse().unwrap(), "lor:uniform".parse().unwrap()],
    )
}

fn replications(c: &mut Criterion) {
    let study = small_study();
    let mut group = c.benchmark_group("replications");
    group.sample_size(10);
    for (name, execution) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &execution, |b, &e| {
            b.iter(|| run_study(&study, e).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, replications);
criterion_main!(benches);
