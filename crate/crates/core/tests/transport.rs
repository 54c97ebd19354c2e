mod common;

use common::*;
use smart::presets::{LinSagaVariant, SuperSagaCompressed};
use smart::problems::{PresetParams, Problem, ProblemSpec};
use smart::operators::{LeastSquares, ProxFn, SmoothFn};
use smart::schedule::DelaySchedule;
use std::sync::Arc;

const TOL: f64 = 1e-6;

fn check(spec: ProblemSpec, preset: &str, iters: u64) {
    let p = spec.generate(17).unwrap();
    let b = p.bundle(preset, &PresetParams::default()).unwrap();
    let got = solve(&b, 3, iters, 1e-13);
    let err = max_abs_diff(&got, p.solution().unwrap());
    assert!(err <= TOL, "{preset}: {err:e}");
}

#[test]
fn prox_saga_recovers_the_lasso_solution() {
    check(ProblemSpec::Lasso { rows: 40, cols: 20, l1: 0.05 }, "prox-saga", 400_000);
}

#[test]
fn lin_saga_recovers_the_constrained_solution() {
    check(ProblemSpec::EqualityQp { rows: 30, cols: 12, constraints: 3, ridge: 0.1 }, "lin-saga", 400_000);
    check(ProblemSpec::EqualityQp { rows: 30, cols: 12, constraints: 3, ridge: 0.1 }, "lin-svrg", 400_000);
}

#[test]
fn prox_smart_recovers_the_fused_solution() {
    check(ProblemSpec::Fused { dim: 20, weight: 0.3 }, "prox-smart", 400_000);
}

#[test]
fn prox_smart_plus_recovers_the_fused_solution() {
    check(ProblemSpec::Fused { dim: 20, weight: 0.3 }, "prox-smart-plus", 400_000);
}

#[test]
fn mono_recovers_the_ridge_solution() {
    check(ProblemSpec::Ridge { rows: 8, cols: 4, ridge: 2.0 }, "mono", 400_000);
}

#[test]
fn saddle_reduction_recovers_the_saddle_point() {
    let (b, sol) = saddle_instance(5, None);
    let got = solve(&b, 4, 400_000, 1e-13);
    assert!(max_abs_diff(&got, &sol) <= TOL);
}

#[test]
fn tropic_and_super_saga_recover_their_solutions() {
    check(ProblemSpec::EqualityQp { rows: 20, cols: 8, constraints: 2, ridge: 0.1 }, "tropic", 400_000);
    check(ProblemSpec::Lasso { rows: 30, cols: 10, l1: 0.05 }, "super-saga", 400_000);
}

#[test]
fn sdca_transport_matches_the_primal_solve() {
    check(ProblemSpec::Ridge { rows: 12, cols: 5, ridge: 0.3 }, "sdca", 400_000);
}

#[test]
fn compressed_super_saga_reaches_the_same_solution() {
    let p = ProblemSpec::Lasso { rows: 30, cols: 10, l1: 0.05 }.generate(19).unwrap();
    let Problem::Lasso { a, b, l1, solution } = &p else { unreachable!() };
    let fs: Vec<Arc<dyn SmoothFn>> = a
        .iter()
        .zip(b)
        .map(|(r, bi)| Arc::new(LeastSquares::row(r, *bi, 0.0).unwrap()) as Arc<dyn SmoothFn>)
        .collect();
    let half = ProxFn::L1 { weight: l1 / 2.0 };
    let full = p.bundle("super-saga", &PresetParams::default()).unwrap();
    let lambda = full.steps.at(0);
    let run = SuperSagaCompressed::new(fs, vec![half.clone(), half], LinSagaVariant::Saga, DelaySchedule::zero(), lambda)
        .unwrap()
        .run(&[0.0; 20], 5, 300_000)
        .unwrap();
    assert!(max_abs_diff(&run.solution, solution) <= TOL, "{:e}", max_abs_diff(&run.solution, solution));
}
