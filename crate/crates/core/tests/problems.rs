mod common;

use common::matrix;
use nalgebra::{DMatrix, DVector};
use smart::problems::{difference_matrix, PresetParams, Problem, ProblemSpec, PRESETS};

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[test]
fn ridge_solution_satisfies_the_normal_equations() {
    let p = ProblemSpec::Ridge { rows: 50, cols: 20, ridge: 0.1 }.generate(7).unwrap();
    let Problem::Ridge { a, b, k, solution } = &p else { panic!() };
    let (a, k, x) = (matrix(a), matrix(k), vector(solution));
    let n = a.nrows() as f64;
    let g = a.transpose() * (&a * &x - vector(b)) / n + &k * &x;
    assert!(g.norm() <= 1e-10, "{:e}", g.norm());
}

#[test]
fn linear_system_is_consistent() {
    for (rows, cols) in [(12, 6), (4, 7)] {
        let p = ProblemSpec::LinearSystem { rows, cols }.generate(3).unwrap();
        let Problem::LinearSystem { a, b, solution } = &p else { panic!() };
        let r = matrix(a) * vector(solution) - vector(b);
        assert!(r.norm() <= 1e-10);
    }
}

#[test]
fn feasibility_point_is_feasible() {
    let p = ProblemSpec::Feasibility { sets: 8, dim: 4, empty: false }.generate(2).unwrap();
    let Problem::Feasibility { a, b, point } = &p else { panic!() };
    let ax = matrix(a) * vector(point);
    assert!(ax.iter().zip(b).all(|(l, r)| *l <= r + 1e-12));
}

#[test]
fn lasso_solution_meets_the_subgradient_conditions() {
    let p = ProblemSpec::Lasso { rows: 40, cols: 20, l1: 0.05 }.generate(5).unwrap();
    let Problem::Lasso { a, b, l1, solution } = &p else { panic!() };
    let a = matrix(a);
    let x = vector(solution);
    let g = a.transpose() * (&a * &x - vector(b)) / a.nrows() as f64;
    for (gi, xi) in g.iter().zip(x.iter()) {
        if *xi != 0.0 {
            assert!((gi + l1 * xi.signum()).abs() <= 1e-8);
        } else {
            assert!(gi.abs() <= l1 + 1e-8);
        }
    }
    assert!(x.iter().any(|v| *v == 0.0));
}

#[test]
fn logistic_solution_is_stationary() {
    let p = ProblemSpec::Logistic { rows: 30, cols: 5, ridge: 0.1 }.generate(4).unwrap();
    let Problem::Logistic { a, labels, ridge, solution } = &p else { panic!() };
    let x = vector(solution);
    let mut g = &x * *ridge;
    for (row, y) in a.iter().zip(labels) {
        let r = vector(row);
        let s = 1.0 / (1.0 + (y * r.dot(&x)).exp());
        g -= r * (y * s / a.len() as f64);
    }
    assert!(g.norm() <= 1e-10);
}

#[test]
fn equality_qp_solution_meets_the_kkt_conditions() {
    let p = ProblemSpec::EqualityQp { rows: 30, cols: 12, constraints: 3, ridge: 0.1 }.generate(6).unwrap();
    let Problem::EqualityQp { a, b, ridge, c, e, solution } = &p else { panic!() };
    let (a, c, x) = (matrix(a), matrix(c), vector(solution));
    assert!((&c * &x - vector(e)).norm() <= 1e-10);
    let g = a.transpose() * (&a * &x - vector(b)) / a.nrows() as f64 + &x * *ridge;
    let ct = c.transpose();
    let coef = ct.clone().svd(true, true).solve(&g, 1e-14).unwrap();
    assert!((g - ct * coef).norm() <= 1e-9);
}

#[test]
fn fused_solution_meets_the_dual_certificate() {
    let p = ProblemSpec::Fused { dim: 20, weight: 0.3 }.generate(8).unwrap();
    let Problem::Fused { c, weight, solution } = &p else { panic!() };
    let d: DMatrix<f64> = difference_matrix(c.len());
    let x = vector(solution);
    let r = vector(c) - &x;
    // x - c + D^T u = 0 with |u| <= weight and u = weight sign(Dx) where Dx != 0
    let u = d.transpose().svd(true, true).solve(&r, 1e-14).unwrap();
    assert!((d.transpose() * &u - &r).norm() <= 1e-7);
    let dx = &d * &x;
    for (ui, di) in u.iter().zip(dx.iter()) {
        assert!(ui.abs() <= weight + 1e-7);
        if di.abs() > 1e-7 {
            assert!((ui - weight * di.signum()).abs() <= 1e-6);
        }
    }
}

#[test]
fn specs_round_trip_through_json() {
    let specs = [
        ProblemSpec::Ridge { rows: 5, cols: 2, ridge: 0.1 },
        ProblemSpec::Feasibility { sets: 3, dim: 2, empty: true },
        ProblemSpec::EqualityQp { rows: 4, cols: 3, constraints: 1, ridge: 1.0 },
        ProblemSpec::Fused { dim: 4, weight: 0.5 },
    ];
    for s in specs {
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ProblemSpec>(&text).unwrap(), s);
    }
    let p = ProblemSpec::Lasso { rows: 6, cols: 3, l1: 0.1 }.generate(1).unwrap();
    let back: Problem = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
    assert_eq!(back, p);
}

#[test]
fn generation_is_deterministic_in_the_seed() {
    let spec = ProblemSpec::Ridge { rows: 6, cols: 3, ridge: 0.1 };
    assert_eq!(spec.generate(1).unwrap(), spec.generate(1).unwrap());
    assert_ne!(spec.generate(1).unwrap(), spec.generate(2).unwrap());
}

#[test]
fn every_preset_applies_to_some_problem() {
    let probs: Vec<Problem> = [
        ProblemSpec::Ridge { rows: 6, cols: 3, ridge: 0.5 },
        ProblemSpec::Lasso { rows: 6, cols: 3, l1: 0.1 },
        ProblemSpec::LinearSystem { rows: 6, cols: 3 },
        ProblemSpec::EqualityQp { rows: 6, cols: 4, constraints: 1, ridge: 0.5 },
        ProblemSpec::Fused { dim: 5, weight: 0.2 },
    ]
    .iter()
    .map(|s| s.generate(3).unwrap())
    .collect();
    for name in PRESETS {
        let ok = probs.iter().any(|p| p.bundle(name, &PresetParams::default()).is_ok());
        assert!(ok, "{name}");
    }
    let fused = &probs[4];
    let err = fused.bundle("kaczmarz", &PresetParams::default()).unwrap_err();
    assert!(matches!(err, smart::Error::Config(_)));
}
