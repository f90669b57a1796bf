//! Parallel vs sequential bound phase on the double-integrator objective and
//! a full 5-step reach. Build with `--no-default-features` to bench the
//! sequential fallback alone.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lipbnb::bnb::{minimize, BnbConfig, Rectangle};
use lipbnb::exec::parallel_available;
use lipbnb::lipschitz::lipschitz_sdp;
use lipbnb::nn::ObjectiveFunction;
use lipbnb::problems::{double_integrator_spec, ProblemKind, RunOverrides};
use lipbnb::reach::reach;
use nalgebra::{DMatrix, DVector};

fn modes() -> Vec<(&'static str, bool)> {
    let mut m = vec![("sequential", false)];
    if parallel_available() {
        m.push(("parallel", true));
    }
    m
}

fn bench_minimize(c: &mut Criterion) {
    let spec = double_integrator_spec();
    let ProblemKind::ClosedLoop { dynamics, initial_set } = &spec.problem.kind else {
        unreachable!()
    };
    let d = dynamics.to_dynamics().unwrap();
    let root: Rectangle = initial_set.to_rectangle().unwrap();
    let obj = ObjectiveFunction::closed_loop(
        Arc::clone(&spec.network),
        DVector::from_column_slice(&[1.0, 0.0]),
        d.a_seq[0].clone(),
        d.b_seq[0].clone(),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    let cert = lipschitz_sdp(&obj, None);

    let mut g = c.benchmark_group("minimize");
    for eps in [1e-3, 1e-4] {
        for (name, parallel) in modes() {
            let cfg = BnbConfig {
                epsilon: eps,
                parallel,
                ..BnbConfig::default()
            };
            g.bench_with_input(BenchmarkId::new(name, eps), &cfg, |b, cfg| {
                b.iter(|| black_box(minimize(&obj, &root, &cert, cfg, &[]).unwrap()))
            });
        }
    }
    g.finish();
}

fn bench_reach(c: &mut Criterion) {
    let spec = double_integrator_spec();
    let ProblemKind::ClosedLoop { dynamics, .. } = &spec.problem.kind else {
        unreachable!()
    };
    let d = dynamics.to_dynamics().unwrap();
    let init = spec.problem.initial_set().unwrap().unwrap();

    let mut g = c.benchmark_group("reach_double_integrator");
    g.sample_size(10);
    for (name, parallel) in modes() {
        let cfg = RunOverrides {
            epsilon: Some(1e-3),
            parallel,
            ..RunOverrides::default()
        }
        .reach_config(&spec.problem);
        g.bench_function(name, |b| b.iter(|| black_box(reach(&d, &spec.network, &init, &cfg).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, bench_minimize, bench_reach);
criterion_main!(benches);
