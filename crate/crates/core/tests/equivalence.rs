mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use smart::presets;
use smart::problems::PresetParams;
use smart::rng::{stream, Stream};
use rand::Rng;
use rand_distr::StandardNormal;

const STEPS: usize = 1000;
const TOL: f64 = 1e-12;

#[test]
fn saga_matches_reference() {
    let p = ridge(10, 5, 0.1, 3);
    let b = p.problem.bundle("saga", &PresetParams::default()).unwrap();
    let dev = max_deviation(&engine_iterates(&b, 11, STEPS), &saga_oracle(&p, &b, 11, STEPS));
    assert!(dev <= TOL, "{dev}");
}

#[test]
fn svrg_avg_matches_reference() {
    let p = ridge(10, 5, 0.1, 4);
    let b = p.problem.bundle("svrg-avg", &PresetParams { tau: 5, ..Default::default() }).unwrap();
    let dev = max_deviation(&engine_iterates(&b, 12, STEPS), &svrg_avg_oracle(&p, &b, 12, STEPS));
    assert!(dev <= TOL, "{dev}");
}

#[test]
fn svrg_sched_matches_reference() {
    let p = ridge(8, 4, 0.1, 5);
    let b = p.problem.bundle("svrg-sched", &PresetParams { tau: 4, ..Default::default() }).unwrap();
    let dev = max_deviation(&engine_iterates(&b, 13, STEPS), &svrg_sched_oracle(&p, &b, 4, 13, STEPS));
    assert!(dev <= TOL, "{dev}");
}

#[test]
fn finito_matches_reference() {
    let p = ridge(8, 3, 0.2, 6);
    let gamma = 1.0 / p.lipschitz();
    let b = p.problem.bundle("finito", &PresetParams { gamma: Some(gamma), ..Default::default() }).unwrap();
    let dev = max_deviation(&engine_iterates(&b, 14, STEPS), &finito_oracle(&p, &b, gamma, 14, STEPS));
    assert!(dev <= TOL, "{dev}");
}

#[test]
fn sdca_matches_reference() {
    let p = ridge(6, 3, 0.5, 7);
    let b = p.problem.bundle("sdca", &PresetParams::default()).unwrap();
    let dev = max_deviation(&engine_iterates(&b, 15, STEPS), &sdca_oracle(&p, 0.5, &b, 15, STEPS));
    assert!(dev <= TOL, "{dev}");
}

#[test]
fn kaczmarz_matches_reference() {
    let mut rng = stream(8, Stream::Verify);
    let a = DMatrix::from_fn(20, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
    let rhs = &a * x;
    let b = presets::kaczmarz(&a, &rhs).unwrap();
    let dev = max_deviation(&engine_iterates(&b, 16, STEPS), &kaczmarz_oracle(&a, &rhs, &b, 16, STEPS));
    assert!(dev <= TOL, "{dev}");
}
