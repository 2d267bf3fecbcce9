use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gprl::degrade::Corruption;
use gprl::flow::{FlowConfig, FlowModel};
use gprl::generator::{GeneratorBundle, GeneratorConfig};
use gprl::harness::{make_targets, Perturbation, TargetKind};
use gprl::parallel::Execution;
use gprl::solver::{run_variant, Solver, SolverConfig, Variant};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn sampling(c: &mut Criterion) {
    let g = GeneratorBundle::new(&GeneratorConfig::default()).unwrap();
    let mut group = c.benchmark_group("sample_w_4096");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| g.sample_w(4096, 7, exec).unwrap())
        });
    }
    group.finish();
}

fn solving(c: &mut Criterion) {
    let g = GeneratorBundle::new(&GeneratorConfig::default()).unwrap();
    let flow = FlowModel::new(&FlowConfig::default()).unwrap();
    let mut cfg = SolverConfig::default();
    cfg.rls.iterations = 10;
    cfg.rls.init_samples = 512;
    cfg.rlsplus.iterations = 5;
    let solver = Solver::new(&g, &flow, cfg).unwrap();
    let targets = make_targets(
        &g,
        TargetKind::Generated,
        4,
        8,
        Corruption::None,
        &Perturbation::default(),
        0,
        Execution::Sequential,
    )
    .unwrap();
    let mut group = c.benchmark_group("rls_plus_4_targets");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_variant(&solver, Variant::RlsPlus, &targets, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sampling, solving);
criterion_main!(benches);
