//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use smart::presets::PresetBundle;
use smart::problems::ProblemSpec;
use smart::rng::{stream, Stream};

pub use smart::reference::*;

pub fn ridge(rows: usize, cols: usize, weight: f64, seed: u64) -> Ridge {
    Ridge::from_problem(ProblemSpec::Ridge { rows, cols, ridge: weight }.generate(seed).unwrap()).unwrap()
}

pub fn engine_iterates(bundle: &PresetBundle, seed: u64, steps: usize) -> Vec<Vec<f64>> {
    smart::reference::engine_iterates(bundle, seed, steps).unwrap()
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    use rand::Rng;
    let mut rng = stream(seed, Stream::Verify);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Halfspaces and balls around a common point, with a root found by the deterministic search.
pub fn projection_instance(seed: u64) -> PresetBundle {
    use smart::operators::{ConvexFn, ProxFn};
    let d = 3;
    let point = gaussian_matrix(d, 1, seed);
    let normals = gaussian_matrix(5, d, seed + 1);
    let sets: Vec<ProxFn> = (0..5)
        .map(|i| {
            let a: Vec<f64> = normals.row(i).iter().copied().collect();
            let b = normals.row(i).transpose().dot(&point) + 0.3;
            ProxFn::Halfspace { a, b }
        })
        .collect();
    let functions = vec![
        ConvexFn::BallExcess { center: point.iter().map(|v| v + 0.2).collect(), radius: 1.0 },
        ConvexFn::Affine { a: vec![1.0, -1.0, 0.5], b: (point[0] - point[1] + 0.5 * point[2]) + 0.1 },
    ];
    let b = smart::presets::projection(sets, functions).unwrap();
    let root = smart::diagnostics::find_root(&b.family, &b.x0, 1e-12, 1_000_000).unwrap();
    b.with_root(root).unwrap()
}

/// Saddle problem `min_w max_z |w|^2/2 + (1/N)(sum f_i(w) + <L w, z> - sum h_i(z)) - |z|^2/2`.
pub fn saddle_instance(seed: u64, gamma: Option<f64>) -> (PresetBundle, Vec<f64>) {
    use smart::operators::{ProxFn, Quadratic, SmoothFn};
    use smart::presets::{saddle, SaddleParts};
    use std::sync::Arc;
    let (dw, dz, pairs) = (3, 2, 2);
    let l = gaussian_matrix(dz, dw, seed) * 0.5;
    let cw = gaussian_matrix(pairs, dw, seed + 1);
    let cz = gaussian_matrix(pairs, dz, seed + 2);
    let fs: Vec<Arc<dyn SmoothFn>> = (0..pairs)
        .map(|i| Arc::new(Quadratic::isotropic(0.5, &cw.row(i).iter().copied().collect::<Vec<_>>()).unwrap()) as Arc<dyn SmoothFn>)
        .collect();
    let hs: Vec<Arc<dyn SmoothFn>> = (0..pairs)
        .map(|i| Arc::new(Quadratic::isotropic(0.5, &cz.row(i).iter().copied().collect::<Vec<_>>()).unwrap()) as Arc<dyn SmoothFn>)
        .collect();
    let n = (pairs + 1) as f64;
    // Optimality: w + (0.5 sum (w - cw_i) + L^T z)/n = 0 and z + (0.5 sum (z - cz_i) - L w)/n = 0.
    let size = dw + dz;
    let mut m = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    let sw = 1.0 + 0.5 * pairs as f64 / n;
    for r in 0..dw {
        m[(r, r)] = sw;
        rhs[r] = 0.5 * cw.column(r).sum() / n;
    }
    for r in 0..dz {
        m[(dw + r, dw + r)] = sw;
        rhs[dw + r] = 0.5 * cz.column(r).sum() / n;
    }
    m.view_mut((0, dw), (dw, dz)).copy_from(&(l.transpose() / n));
    m.view_mut((dw, 0), (dz, dw)).copy_from(&(-&l / n));
    let sol = m.lu().solve(&rhs).unwrap();
    let parts = SaddleParts { g1: ProxFn::SqL2 { weight: 1.0 }, g2: ProxFn::SqL2 { weight: 1.0 }, l, fs, hs };
    let gamma = gamma.unwrap_or(0.5);
    let solution: Vec<f64> = sol.iter().copied().collect();
    let b = saddle(parts, gamma).unwrap().with_solution(solution.clone()).unwrap();
    (b, solution)
}

/// TropicSMART on a feasibility form with no smooth term.
pub fn tropic_without_smooth_term(seed: u64) -> PresetBundle {
    use smart::operators::ProxFn;
    use smart::presets::{tropic, TropicParts};
    let c = gaussian_matrix(2, 4, seed);
    let e = DVector::from_column_slice(&[0.3, -0.2]);
    let delta: f64 = 0.25;
    let cn = c.clone().singular_values().max();
    let g1 = 1.0;
    let parts = TropicParts {
        gs: vec![ProxFn::SqDist { weight: 1.0, center: vec![1.0, -1.0, 0.5, 0.0] }],
        f: None,
        a: vec![c],
        b: e,
        gammas: vec![g1, delta / (g1 * cn * cn)],
        delta,
    };
    let b = tropic(parts).unwrap();
    let root = smart::diagnostics::find_root(&b.family, &b.x0, 1e-12, 2_000_000).unwrap();
    b.with_root(root).unwrap()
}

/// Every shipped preset family with an attached root, by label.
pub fn coherence_cases() -> Vec<(String, PresetBundle)> {
    use smart::problems::PresetParams;
    let mut out = Vec::new();
    let mut add = |label: &str, spec: ProblemSpec, presets: &[&str], params: PresetParams| {
        let p = spec.generate(31).unwrap();
        for name in presets {
            out.push((format!("{label}/{name}"), p.bundle(name, &params).unwrap()));
        }
    };
    add(
        "ridge",
        ProblemSpec::Ridge { rows: 10, cols: 5, ridge: 0.1 },
        &["saga", "saga-importance", "svrg-avg", "svrg-sched", "finito", "sdca", "prox-saga", "coordinate-saga", "minibatch-pre", "minibatch-post"],
        PresetParams::default(),
    );
    add("ridge-strong", ProblemSpec::Ridge { rows: 5, cols: 3, ridge: 2.0 }, &["mono"], PresetParams::default());
    add("lasso", ProblemSpec::Lasso { rows: 10, cols: 6, l1: 0.05 }, &["prox-saga", "super-saga"], PresetParams::default());
    add("logistic", ProblemSpec::Logistic { rows: 10, cols: 4, ridge: 0.1 }, &["saga", "finito"], PresetParams::default());
    add("system", ProblemSpec::LinearSystem { rows: 12, cols: 6 }, &["kaczmarz", "projection"], PresetParams::default());
    add("wide-system", ProblemSpec::LinearSystem { rows: 4, cols: 7 }, &["kaczmarz"], PresetParams::default());
    add("feasibility", ProblemSpec::Feasibility { sets: 6, dim: 3, empty: false }, &["projection"], PresetParams::default());
    add(
        "eq-qp",
        ProblemSpec::EqualityQp { rows: 10, cols: 5, constraints: 2, ridge: 0.1 },
        &["lin-saga", "lin-svrg", "tropic"],
        PresetParams::default(),
    );
    add("fused", ProblemSpec::Fused { dim: 6, weight: 0.3 }, &["prox-smart", "prox-smart-plus"], PresetParams::default());
    out.push(("sets+sublevel/projection".into(), projection_instance(41)));
    out.push(("feasibility/tropic".into(), tropic_without_smooth_term(42)));
    out.push(("saddle/mono".into(), saddle_instance(43, None).0));
    out
}

/// Runs until the residual drops below `tol` and returns the transported point.
pub fn solve(bundle: &PresetBundle, seed: u64, max_iters: u64, tol: f64) -> Vec<f64> {
    use smart::engine::{RunOptions, StopRule};
    let (smart, mut state) = bundle.start(seed).unwrap();
    let opts = RunOptions::new(StopRule::residual(max_iters, tol, 100)).stride(max_iters);
    smart.run(&mut state, &opts).unwrap();
    bundle.transport.apply(&state.x).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}
