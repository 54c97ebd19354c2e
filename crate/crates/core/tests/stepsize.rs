mod common;

use std::sync::Arc;

use approx::assert_relative_eq;
use common::ridge;
use smart::operators::{Quadratic, SmoothFn};
use smart::presets::{self, PresetBundle, SvrgMode};
use smart::problems::{PresetParams, ProblemSpec, PRESETS};
use smart::stepsize::{linear_bound, sync_weak_bound, weak_bound, weak_bound_constant, RatePlan, RateTable};

fn isotropic(l: f64, n: usize, d: usize) -> Vec<Arc<dyn SmoothFn>> {
    (0..n)
        .map(|i| {
            let c: Vec<f64> = (0..d).map(|j| (i + j) as f64 * 0.1).collect();
            Arc::new(Quadratic::isotropic(l, &c).unwrap()) as Arc<dyn SmoothFn>
        })
        .collect()
}

fn all_bundles() -> Vec<PresetBundle> {
    let specs = [
        ProblemSpec::Ridge { rows: 8, cols: 4, ridge: 0.2 },
        ProblemSpec::Lasso { rows: 8, cols: 4, l1: 0.1 },
        ProblemSpec::Logistic { rows: 8, cols: 3, ridge: 0.1 },
        ProblemSpec::LinearSystem { rows: 8, cols: 4 },
        ProblemSpec::Feasibility { sets: 5, dim: 3, empty: false },
        ProblemSpec::EqualityQp { rows: 8, cols: 4, constraints: 2, ridge: 0.1 },
        ProblemSpec::Fused { dim: 5, weight: 0.2 },
    ];
    let mut out = Vec::new();
    for spec in specs {
        let p = spec.generate(5).unwrap();
        for name in PRESETS {
            if let Ok(b) = p.bundle(name, &PresetParams::default()) {
                out.push(b);
            }
        }
    }
    assert!(out.len() >= 25, "{}", out.len());
    out
}

#[test]
fn table_saga_substitution() {
    let r = RateTable::Saga { l: 1.0, mu: 0.1, n: 10.0 }.evaluate().unwrap();
    assert_relative_eq!(r.largest.unwrap(), 0.5, max_relative = 1e-15);
    assert_relative_eq!(r.best_rate_lambda, 0.2, max_relative = 1e-15);
    assert_relative_eq!(r.rate, 0.98, max_relative = 1e-15);
}

#[test]
fn table_kaczmarz_and_finito_rows() {
    let r = RateTable::Kaczmarz { n: 20.0, a_inv_norm: 2.0 }.evaluate().unwrap();
    assert_eq!((r.largest, r.best_rate_lambda), (Some(1.0), 0.5));
    assert_relative_eq!(r.rate, 1.0 - 1.0 / (2.0 * 20.0 * 4.0));
    let r = RateTable::Finito { l: 2.0, mu_hat: 0.5, n: 8.0 }.evaluate().unwrap();
    assert_eq!((r.largest, r.largest_gamma), (Some(0.5), Some(1.0)));
    assert_eq!((r.best_rate_lambda, r.best_gamma), (0.25, Some(0.5)));
    assert_relative_eq!(r.rate, 1.0 - (1.0 - 0.75f64.sqrt()) / 32.0);
}

#[test]
fn table_svrg_and_sdca_rows() {
    let r = RateTable::SvrgSched { l: 2.0, mu: 0.5, tau: 4.0 }.evaluate().unwrap();
    assert_relative_eq!(r.largest.unwrap(), 1.0 / 12.0);
    assert_relative_eq!(r.best_rate_lambda, 1.0 / (24.0 + 2.5));
    let r = RateTable::SvrgAvg { l: 2.0, mu: 0.5, tau: 4.0 }.evaluate().unwrap();
    assert_relative_eq!(r.best_rate_lambda, 1.0 / 10.0);
    assert_relative_eq!(r.rate, 0.95);
    let r = RateTable::Sdca { l: 1.0, mu0: 0.1, n: 10.0 }.evaluate().unwrap();
    assert_eq!((r.largest, r.best_rate_lambda), (Some(0.75), 0.375));
    assert_relative_eq!(r.rate, 1.0 - 0.3 / 16.0);
}

#[test]
fn synchronous_saga_bounds_match_the_table() {
    let (l, n) = (2.0, 10);
    let b = presets::saga(isotropic(l, n, 3), false).unwrap();
    assert_relative_eq!(sync_weak_bound(&b.family, &b.law).unwrap(), 1.0 / (2.0 * l), max_relative = 1e-12);
    let mu = b.family.mu().unwrap();
    let plan = RatePlan::new(1.0 / n as f64, 0.5, &b.law, &b.graph).unwrap();
    let lb = linear_bound(&b.family, &b.law, &b.graph, 0, 0, 0, plan).unwrap();
    let row = RateTable::Saga { l, mu, n: n as f64 }.evaluate().unwrap();
    assert_relative_eq!(lb.lambda, row.best_rate_lambda, max_relative = 1e-12);
    assert_relative_eq!(lb.per_iteration(), row.rate, max_relative = 1e-12);
}

#[test]
fn scheduled_svrg_bound_matches_the_table() {
    let (l, n, tau) = (1.5, 6, 4);
    let b = presets::svrg(isotropic(l, n, 2), tau, SvrgMode::Scheduled).unwrap();
    let mu = b.family.mu().unwrap();
    let plan = RatePlan::new(1.0, 0.5, &b.law, &b.graph).unwrap();
    let lb = linear_bound(&b.family, &b.law, &b.graph, 0, tau, 0, plan).unwrap();
    let row = RateTable::SvrgSched { l, mu, tau: tau as f64 }.evaluate().unwrap();
    assert_relative_eq!(lb.lambda, row.best_rate_lambda, max_relative = 1e-12);
    assert_relative_eq!(lb.per_iteration(), row.rate, max_relative = 1e-12);
}

#[test]
fn kaczmarz_synchronous_bound_is_one() {
    let p = ProblemSpec::LinearSystem { rows: 12, cols: 5 }.generate(2).unwrap();
    let b = p.bundle("kaczmarz", &PresetParams::default()).unwrap();
    assert_relative_eq!(sync_weak_bound(&b.family, &b.law).unwrap(), 1.0, max_relative = 1e-12);
    assert_relative_eq!(weak_bound_constant(&b.family, &b.law, 0, 0).unwrap(), 1.0, max_relative = 1e-12);
}

#[test]
fn bounds_are_positive_and_monotone_in_delays() {
    for b in all_bundles() {
        let mut prev_p = f64::INFINITY;
        for tp in 0..8 {
            let mut prev_d = f64::INFINITY;
            for td in 0..8 {
                let v = weak_bound_constant(&b.family, &b.law, tp, td).unwrap();
                assert!(v > 0.0 && v.is_finite(), "{} {tp} {td}: {v}", b.name);
                assert!(v <= prev_d * (1.0 + 1e-12), "{} not monotone in tau_d", b.name);
                prev_d = v;
            }
            let v = weak_bound_constant(&b.family, &b.law, tp, 0).unwrap();
            assert!(v <= prev_p * (1.0 + 1e-12), "{} not monotone in tau_p", b.name);
            prev_p = v;
        }
    }
}

#[test]
fn linear_bound_is_within_weak_bound_and_monotone() {
    for b in all_bundles().into_iter().filter(|b| b.family.mu().is_some_and(|m| m > 0.0)) {
        let plan = RatePlan::default_for(&b.law, &b.graph).unwrap();
        for (tp, td) in [(0, 0), (1, 0), (0, 2), (3, 3), (6, 2)] {
            let weak = weak_bound_constant(&b.family, &b.law, tp, td).unwrap();
            let mut prev = f64::INFINITY;
            for delta in 0..=tp {
                let lb = linear_bound(&b.family, &b.law, &b.graph, tp, td, delta, plan).unwrap();
                assert!(lb.lambda > 0.0, "{}", b.name);
                assert!(lb.lambda <= weak * (1.0 + 1e-12), "{} ({tp},{td}): {} > {weak}", b.name, lb.lambda);
                assert!(lb.lambda <= prev * (1.0 + 1e-12), "{} not monotone in delta", b.name);
                assert!(lb.factor < 1.0 && lb.factor > 0.0);
                prev = lb.lambda;
            }
        }
        let mut prev = f64::INFINITY;
        for tp in 1..6 {
            let lb = linear_bound(&b.family, &b.law, &b.graph, tp, 1, 0, plan).unwrap();
            assert!(lb.lambda <= prev * (1.0 + 1e-12), "{} not monotone in tau_p", b.name);
            prev = lb.lambda;
        }
    }
}

#[test]
fn zero_modulus_predicts_no_contraction() {
    let p = ridge(6, 3, 0.1, 1);
    let b = p.problem.bundle("saga", &PresetParams::default()).unwrap();
    let fam = b.family.with_mu_unchecked(Some(0.0));
    let plan = RatePlan::default_for(&b.law, &b.graph).unwrap();
    assert_eq!(linear_bound(&fam, &b.law, &b.graph, 0, 0, 0, plan).unwrap().factor, 1.0);
    assert_eq!(linear_bound(&fam, &b.law, &b.graph, 2, 2, 1, plan).unwrap().factor, 1.0);
}

#[test]
fn band_bound_is_the_geometric_mean() {
    let p = ridge(6, 3, 0.1, 1);
    let b = p.problem.bundle("saga", &PresetParams::default()).unwrap();
    let k = weak_bound_constant(&b.family, &b.law, 2, 1).unwrap();
    assert_relative_eq!(weak_bound(&b.family, &b.law, 2, 1, k / 4.0).unwrap(), k / 2.0, max_relative = 1e-12);
    assert!(weak_bound(&b.family, &b.law, 2, 1, 2.0 * k).is_err());
}

#[test]
fn rate_plan_rejects_out_of_range_parameters() {
    let p = ridge(6, 3, 0.1, 1);
    let b = p.problem.bundle("saga", &PresetParams::default()).unwrap();
    assert!(RatePlan::new(1.0, 0.5, &b.law, &b.graph).is_err());
    assert!(RatePlan::new(1.0 / 6.0, 1.0, &b.law, &b.graph).is_err());
    assert!(RatePlan::new(1.0 / 6.0, 0.0, &b.law, &b.graph).is_ok());
}
