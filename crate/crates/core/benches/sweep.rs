use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bgsim::abd::abd_implementation;
use bgsim::bg::{BgSystem, RefinementMonitor};
use bgsim::explore::{explore, ExploreConfig};
use bgsim::mp::{CrashScript, MpModel, Workload};
use bgsim::object_spec::SeqSpec;
use bgsim::par::Parallelism;
use bgsim::sm::{sm_run, SmFairRandom};

fn workload(scripts: &[&str]) -> Workload {
    Workload::new(scripts.iter().map(|s| Workload::parse_script(s).unwrap()).collect())
}

const MODES: [(&str, Parallelism); 2] = [("parallel", Parallelism::Parallel), ("sequential", Parallelism::Sequential)];

fn abd_explore(c: &mut Criterion) {
    let imp = abd_implementation(2, 3);
    let model = MpModel::new(&imp, workload(&["write(1) read()", "read()"])).checking(SeqSpec::mw_register(0));
    let mut g = c.benchmark_group("abd_explore_depth10");
    g.sample_size(10);
    for (name, par) in MODES {
        let cfg = ExploreConfig::new(10).with_parallelism(par);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| explore(&model, &cfg).visited));
    }
    g.finish();
}

fn bg_runs(c: &mut Criterion) {
    let sys = BgSystem::new(abd_implementation(2, 3));
    let w = workload(&["write(1) read()", "write(2) read()"]);
    let mut g = c.benchmark_group("bg_runs_64");
    g.sample_size(10);
    for (name, par) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par.map_range(0..64, |seed| {
                    let mut mon = RefinementMonitor::new(&sys);
                    let mut sched = SmFairRandom::new(seed, SmFairRandom::default_deadline(2));
                    sm_run(&sys, &mut sched, &w, 200_000, &CrashScript::none(), &mut mon)
                        .unwrap()
                        .trace
                        .steps
                        .len()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, abd_explore, bg_runs);
criterion_main!(benches);
