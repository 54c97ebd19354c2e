mod common;

use approx::assert_relative_eq;
use common::*;
use smart::engine::{RunOptions, StopRule};
use smart::problems::PresetParams;
use smart::rng::{stream, Stream};
use smart::sampling::{trigger_prob, BlockMode, SamplingLaw, TriggerGraph};
use smart::stepsize::{sync_weak_bound, RateTable};

#[test]
fn masked_dual_entries_stay_zero() {
    for (label, b) in coherence_cases() {
        let (smart, mut state) = b.start(9).unwrap();
        smart.run(&mut state, &RunOptions::new(StopRule::iterations(3000)).stride(3000)).unwrap();
        let fam = &b.family;
        for i in 0..fam.n() {
            let row = state.duals.row(i);
            for j in (0..fam.m()).filter(|&j| !fam.star()[i][j]) {
                assert!(row[fam.layout().range(j)].iter().all(|&v| v == 0.0), "{label}: y[{i}][{j}]");
            }
        }
    }
}

#[test]
fn trigger_probability_matches_monte_carlo() {
    let q = vec![0.5, 0.3, 0.2];
    let p = vec![
        vec![0.1, 0.4, 0.25],
        vec![0.2, 0.1, 0.25],
        vec![0.3, 0.2, 0.25],
        vec![0.4, 0.3, 0.25],
    ];
    let rho = 0.6;
    let law = SamplingLaw::new(q, p, rho, BlockMode::SingleBlock).unwrap();
    let graph = TriggerGraph::circulant(4, 2).unwrap();
    let draws = 100_000;
    let mut rng = stream(77, Stream::Verify);
    let mut hits = vec![vec![0u32; 3]; 4];
    for _ in 0..draws {
        let d = law.draw(&mut rng);
        if !d.eps {
            continue;
        }
        for &t in graph.triggers(d.i) {
            for &j in &d.blocks {
                hits[t][j] += 1;
            }
        }
    }
    for (i, row) in hits.iter().enumerate() {
        for (j, &h) in row.iter().enumerate() {
            let expected = rho * trigger_prob(&law, &graph, i, j).unwrap();
            let freq = h as f64 / draws as f64;
            let sigma = (expected * (1.0 - expected) / draws as f64).sqrt();
            assert!((freq - expected).abs() <= 3.0 * sigma, "({i},{j}): {freq} vs {expected}");
        }
    }
}

#[test]
fn importance_sampling_bound_uses_the_mean_lipschitz_constant() {
    let p = ridge(12, 4, 0.05, 3);
    let b = p.problem.bundle("saga-importance", &PresetParams::default()).unwrap();
    let lips: Vec<f64> = (0..p.n())
        .map(|i| {
            let ai = p.a.row(i).transpose();
            (&ai * ai.transpose() + &p.k).symmetric_eigenvalues().max()
        })
        .collect();
    let mean = lips.iter().sum::<f64>() / lips.len() as f64;
    let bound = sync_weak_bound(&b.family, &b.law).unwrap();
    assert_relative_eq!(bound, 1.0 / (2.0 * mean), max_relative = 1e-9);
    let row = RateTable::Importance { lipschitz: lips.clone(), mu: 0.05 }.evaluate().unwrap();
    assert_relative_eq!(row.largest.unwrap(), bound, max_relative = 1e-9);
    let uniform = p.problem.bundle("saga", &PresetParams::default()).unwrap();
    let max = lips.iter().copied().fold(0.0, f64::max);
    assert_relative_eq!(sync_weak_bound(&uniform.family, &uniform.law).unwrap(), 1.0 / (2.0 * max), max_relative = 1e-9);
}

#[test]
fn sampling_laws_are_validated() {
    assert!(SamplingLaw::new(vec![0.5, 0.6], vec![vec![1.0, 1.0]], 1.0, BlockMode::SingleBlock).is_err());
    assert!(SamplingLaw::new(vec![1.0], vec![vec![0.7], vec![0.7]], 1.0, BlockMode::SingleBlock).is_err());
    assert!(SamplingLaw::new(vec![1.0], vec![vec![1.0]], 0.0, BlockMode::SingleBlock).is_err());
}
