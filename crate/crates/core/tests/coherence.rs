mod common;

use std::sync::Arc;

use common::*;
use smart::blockspace::BlockLayout;
use smart::operators::{Quadratic, SmoothFn};
use smart::presets::{self, CoordinateBeta};
use smart::problems::{PresetParams, ProblemSpec};

const TRIALS: usize = 2000;
const SLACK: f64 = 1e-10;

#[test]
fn presets_are_coherent_with_their_constants() {
    for (label, b) in coherence_cases() {
        if label.ends_with("/sdca") {
            continue;
        }
        let r = b.family.verify_coherence(TRIALS, SLACK, 1).unwrap();
        assert!(r.passed, "{label}: violation {:e}", r.max_violation);
    }
}

#[test]
fn sdca_stated_constant_is_violated_but_a_smaller_one_holds() {
    let p = ProblemSpec::Ridge { rows: 10, cols: 5, ridge: 0.1 }.generate(31).unwrap();
    let b = p.bundle("sdca", &PresetParams::default()).unwrap();
    let stated = b.family.verify_coherence(TRIALS, SLACK, 1).unwrap();
    assert!(!stated.passed);
    let reduced = b.family.scaled_beta(0.2).verify_coherence(TRIALS, SLACK, 1).unwrap();
    assert!(reduced.passed, "{:e}", reduced.max_violation);
}

#[test]
fn presets_with_a_modulus_are_quasi_monotone() {
    let mut checked = 0;
    for (label, b) in coherence_cases() {
        if b.family.mu().is_none() || label.starts_with("wide-system") {
            continue;
        }
        let r = b.family.verify_quasi_monotone(TRIALS, SLACK, 2).unwrap();
        assert!(r.passed, "{label}: violation {:e}", r.max_violation);
        checked += 1;
    }
    assert!(checked >= 15, "{checked}");
}

#[test]
fn underdetermined_kaczmarz_is_quasi_monotone_on_its_solution_set() {
    let p = ProblemSpec::LinearSystem { rows: 4, cols: 7 }.generate(3).unwrap();
    let b = p.bundle("kaczmarz", &PresetParams::default()).unwrap();
    assert!(matches!(b.family.solution(), Some(smart::operators::SolutionSet::Affine { .. })));
    let r = b.family.verify_quasi_monotone(TRIALS, SLACK, 4).unwrap();
    assert!(r.passed, "{:e}", r.max_violation);
}

#[test]
fn coordinatewise_constants_are_coherent() {
    let p = ridge(8, 4, 0.1, 5);
    let fs: Vec<Arc<dyn SmoothFn>> = (0..p.n())
        .map(|i| {
            let ai = p.a.row(i).transpose();
            Arc::new(Quadratic::new(&ai * ai.transpose() + &p.k, &ai * p.b[i]).unwrap()) as Arc<dyn SmoothFn>
        })
        .collect();
    for layout in [BlockLayout::uniform(4, 1).unwrap(), BlockLayout::new(vec![1, 3]).unwrap()] {
        for mode in [CoordinateBeta::Global, CoordinateBeta::Coordinatewise] {
            let b = presets::coordinate_saga(fs.clone(), Arc::new(layout.clone()), mode)
                .unwrap()
                .with_solution(p.problem.solution().unwrap().to_vec())
                .unwrap();
            let r = b.family.verify_coherence(TRIALS, SLACK, 6).unwrap();
            assert!(r.passed, "{mode:?} {:?}: {:e}", layout.dims(), r.max_violation);
        }
    }
}

#[test]
fn scaling_beta_up_breaks_coherence() {
    let p = ridge(8, 4, 0.1, 5);
    let b = p.problem.bundle("saga", &PresetParams::default()).unwrap();
    let r = b.family.scaled_beta(3.0).verify_coherence(TRIALS, SLACK, 7).unwrap();
    assert!(!r.passed);
}
