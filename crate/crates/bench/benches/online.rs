use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use tvsdp::online::{self, gamma_bar_heuristic};
use tvsdp::scenario::X0Config;
use tvsdp::{Scenario, ScenarioConfig, SolverOpts};
use tvsdp_bench::plant;

fn steps(c: &mut Criterion) {
    let opts = SolverOpts::default();
    for kind in ["smib", "jet", "pendulum"] {
        let (_, sys, x0) = plant(kind);
        let cert0 = online::solve_initial(&sys, &x0, &opts).unwrap();
        let gb = gamma_bar_heuristic(&cert0);
        let x1 = sys.step(&x0, &cert0.input(&x0)).unwrap();
        c.bench_function(&format!("initial_step/{kind}"), |b| {
            b.iter(|| online::solve_initial(&sys, black_box(&x0), &opts).unwrap())
        });
        c.bench_function(&format!("coupled_step/{kind}"), |b| {
            b.iter(|| online::solve_step(&sys, 1, black_box(&x1), &cert0.p, gb, &opts).unwrap())
        });
    }
}

fn full_run(c: &mut Criterion) {
    let (p, _, _) = plant("smib");
    let cfg = ScenarioConfig::new(p, Scenario::OnlineSdp, X0Config::canonical());
    let mut group = c.benchmark_group("run");
    group.sample_size(10);
    group.bench_function("smib_online_sdp", |b| b.iter(|| tvsdp::run_scenario(black_box(&cfg)).unwrap()));
    group.finish();
}

criterion_group!(benches, steps, full_run);
criterion_main!(benches);
