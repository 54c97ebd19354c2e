mod common;

use std::sync::Arc;

use common::*;
use smart::asyncexec::{replay, run_async, AsyncConfig, THREADS_ENV};
use smart::blockspace::{BlockLayout, BlockVector, Metric};
use smart::engine::{DualInit, StepSizes};
use smart::operators::{FnOperator, Operator, OperatorFamily};
use smart::presets::{self, PresetBundle};
use smart::problems::PresetParams;
use smart::sampling::{SamplingLaw, TriggerGraph};
use smart::schedule::DelaySchedule;
use smart::Error;

fn run(b: &PresetBundle, workers: usize, tau_p: usize, iters: u64) -> smart::asyncexec::AsyncOutput {
    let steps = presets::default_steps(&b.family, &b.law, &b.graph, &DelaySchedule::uniform_mode(tau_p, 0, smart::schedule::DelayMode::UniformRandom, 0).unwrap()).unwrap();
    run_async(
        b.family.clone(),
        b.law.clone(),
        b.graph.clone(),
        steps,
        b.x0.clone(),
        b.dual_init.clone(),
        11,
        AsyncConfig { workers, tau_p, iters, stride: 100 },
    )
    .unwrap()
}

fn check_replay(b: &PresetBundle, out: &smart::asyncexec::AsyncOutput, steps: StepSizes) {
    let x = replay(b.family.clone(), b.law.clone(), b.graph.clone(), steps, b.x0.clone(), b.dual_init.clone(), Arc::new(out.log.clone()))
        .unwrap();
    assert!(max_abs_diff(x.as_slice(), out.x.as_slice()) <= 1e-12);
}

#[test]
fn saga_async_run_replays_exactly() {
    let p = ridge(10, 4, 0.1, 2);
    let b = p.problem.bundle("coordinate-saga", &PresetParams::default()).unwrap();
    let out = run(&b, 4, 4, 4000);
    assert_eq!(out.log.records.len(), 4000);
    let max_d = out.log.records.iter().flat_map(|r| r.d.iter()).copied().max().unwrap() as usize;
    assert!(max_d <= 4);
    check_replay(&b, &out, out.trace.last().map(|r| StepSizes::Constant(r.lambda)).unwrap());
}

#[test]
fn kaczmarz_async_run_replays_and_converges() {
    let a = gaussian_matrix(20, 10, 3);
    let xs = gaussian_matrix(10, 1, 4);
    let rhs = (&a * &xs).column(0).into_owned();
    let b = presets::kaczmarz(&a, &rhs).unwrap();
    let out = run(&b, 4, 3, 60_000);
    let lambda = out.trace[0].lambda;
    check_replay(&b, &out, StepSizes::Constant(lambda));
    let r = (&a * nalgebra::DVector::from_column_slice(out.x.as_slice()) - &rhs).norm();
    assert!(r <= 1e-6, "{r:e}");
    assert!(out.log.records.iter().all(|rec| rec.d.iter().all(|&d| d as usize <= 3)));
}

#[test]
fn thread_cap_limits_workers() {
    let p = ridge(6, 3, 0.1, 1);
    let b = p.problem.bundle("saga", &PresetParams::default()).unwrap();
    std::env::set_var(THREADS_ENV, "2");
    let cfg = AsyncConfig { workers: 8, tau_p: 2, iters: 50, stride: 0 };
    assert_eq!(cfg.effective_workers(), 2);
    let out = run(&b, 8, 2, 50);
    std::env::remove_var(THREADS_ENV);
    assert_eq!(out.workers, 2);
    assert_eq!(out.trace.len(), 2);
}

#[test]
fn worker_panics_surface_as_errors() {
    let layout = Arc::new(BlockLayout::single(1).unwrap());
    let op: Arc<dyn Operator> = Arc::new(FnOperator::new("boom", 1, |x: &BlockVector, out: &mut [f64]| {
        if x.as_slice()[0] < 0.5 {
            panic!("operator exploded");
        }
        out[0] = x.as_slice()[0];
        Ok(())
    }));
    let fam = Arc::new(OperatorFamily::new(layout.clone(), vec![op], vec![vec![1.0]], vec![vec![false]], Metric::Product).unwrap());
    let x0 = BlockVector::new(layout, vec![1.0]).unwrap();
    let err = run_async(
        fam,
        SamplingLaw::uniform(1, 1.0).unwrap(),
        TriggerGraph::self_loops(1).unwrap(),
        StepSizes::Constant(0.9),
        x0,
        DualInit::Zero,
        0,
        AsyncConfig { workers: 2, tau_p: 1, iters: 100, stride: 0 },
    )
    .unwrap_err();
    match err {
        Error::Numerical(msg) => assert!(msg.contains("panicked"), "{msg}"),
        e => panic!("{e:?}"),
    }
}

#[test]
fn four_workers_solve_a_large_consistent_system() {
    let a = gaussian_matrix(200, 50, 5);
    let rhs = (&a * gaussian_matrix(50, 1, 6)).column(0).into_owned();
    let b = presets::kaczmarz(&a, &rhs).unwrap();
    let out = run(&b, 4, 4, 150_000);
    let r = (&a * nalgebra::DVector::from_column_slice(out.x.as_slice()) - &rhs).norm();
    assert!(r <= 1e-6, "{r:e}");
    assert!(out.log.inconsistency() <= 4 && out.log.max_primal_delay() <= 4);
    check_replay(&b, &out, StepSizes::Constant(out.trace[0].lambda));
}
