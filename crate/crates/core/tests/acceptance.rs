//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Exits non-zero when a criterion fails for a reason not listed in [`KNOWN`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::sync::Arc;
use std::time::Instant;

use common::*;
use smart::asyncexec::{replay, run_async, AsyncConfig};
use smart::diagnostics::{envelope_test, Envelope};
use smart::engine::{RunOptions, StepSizes, StopRule};
use smart::presets::{self, PresetBundle};
use smart::problems::{PresetParams, ProblemSpec, PRESETS};
use smart::rng::{stream, Stream};
use smart::sampling::{trigger_prob, BlockMode, SamplingLaw, TriggerGraph};
use smart::schedule::{DelayMode, DelaySchedule};
use smart::stepsize::{linear_bound, sync_weak_bound, weak_bound_constant, RatePlan, RateTable};

const COHERENCE_POINTS: usize = 10_000;
const COHERENCE_SLACK: f64 = 1e-10;
const SEEDS: u64 = 50;
const ENVELOPE_SLACK: f64 = 0.05;
const ENVELOPE_ITERS: u64 = 6000;
const ORACLE_STEPS: usize = 1000;
const ORACLE_TOL: f64 = 1e-12;
const DELAY_RESIDUAL: f64 = 1e-6;
const DELAY_BUDGET: u64 = 100_000;
const REPLAY_TOL: f64 = 1e-12;
const TRANSPORT_TOL: f64 = 1e-6;
const TRIGGER_DRAWS: usize = 100_000;

/// Labels whose failure is expected, with the reason printed next to them.
const KNOWN: &[(&str, &str)] = &[(
    "ridge/sdca",
    "the stated constant 3/4 exceeds the cocoercivity of I - mu0 N grad g, which is below 3/4 for N >= 2",
)];

type Outcome = Result<String, Vec<String>>;
type Criterion = (&'static str, fn() -> Outcome);

fn known(label: &str) -> Option<&'static str> {
    KNOWN.iter().find(|(l, _)| *l == label).map(|(_, r)| *r)
}

fn coherence() -> Outcome {
    let mut failures = Vec::new();
    let cases = coherence_cases();
    for (label, b) in &cases {
        let r = b.family.verify_coherence(COHERENCE_POINTS, COHERENCE_SLACK, 1).unwrap();
        if !r.passed {
            failures.push(format!("{label} max violation {:.3e}", r.max_violation));
        }
    }
    let n = cases.len();
    if failures.is_empty() {
        Ok(format!("{n} families, {COHERENCE_POINTS} points each"))
    } else {
        Err(failures)
    }
}

fn envelope(name: &str, b: &PresetBundle, rate: f64, burn_in: u64) -> Result<String, String> {
    let stride = ENVELOPE_ITERS / 200;
    let mut traces = Vec::new();
    let mut iters = Vec::new();
    for seed in 0..SEEDS {
        let (smart, mut st) = b.start(seed).unwrap();
        let out = smart.run(&mut st, &RunOptions::new(StopRule::iterations(ENVELOPE_ITERS)).stride(stride)).unwrap();
        iters = out.trace.iter().map(|r| r.iter).collect();
        traces.push(out.trace.iter().map(|r| r.dist_sq.unwrap()).collect());
    }
    let env = Envelope { factor: rate, period: 1, burn_in, slack: ENVELOPE_SLACK };
    let r = envelope_test(&traces, &iters, env).unwrap();
    let line = format!("{name} rate {rate:.6} fitted {:.6}", r.fitted_factor.unwrap_or(f64::NAN));
    if r.pass {
        Ok(line)
    } else {
        Err(format!("{line}: ratio {:.3} at k = {:?}", r.max_ratio, r.max_violation_iter))
    }
}

fn envelopes() -> Outcome {
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    let mut push = |r: Result<String, String>| match r {
        Ok(s) => ok.push(s),
        Err(s) => failures.push(s),
    };

    let p = ridge(10, 5, 0.1, 21);
    let (l, mu) = (p.lipschitz(), p.strong_convexity());
    let row = RateTable::Saga { l, mu, n: 10.0 }.evaluate().unwrap();
    let b = p.problem.bundle("saga", &PresetParams::default()).unwrap();
    push(envelope("saga", &b.with_steps(StepSizes::Constant(row.best_rate_lambda)).unwrap(), row.rate, 300));

    let row = RateTable::SvrgSched { l, mu, tau: 4.0 }.evaluate().unwrap();
    let b = p.problem.bundle("svrg-sched", &PresetParams { tau: 4, ..Default::default() }).unwrap();
    push(envelope("svrg-sched", &b.with_steps(StepSizes::Constant(row.best_rate_lambda)).unwrap(), row.rate, 300));

    let a = gaussian_matrix(50, 20, 22);
    let xs = gaussian_matrix(20, 1, 23);
    let rhs = (&a * &xs).column(0).into_owned();
    let mut normalized = a.clone();
    for mut r in normalized.row_iter_mut() {
        let n = r.norm();
        r /= n;
    }
    let smin = normalized.singular_values().min();
    let row = RateTable::Kaczmarz { n: 50.0, a_inv_norm: 1.0 / smin }.evaluate().unwrap();
    let b = presets::kaczmarz(&a, &rhs).unwrap();
    push(envelope("kaczmarz", &b.with_steps(StepSizes::Constant(row.best_rate_lambda)).unwrap(), row.rate, 300));

    let p = ridge(8, 4, 0.5, 23);
    let row = RateTable::Finito { l: p.lipschitz(), mu_hat: p.strong_convexity(), n: 8.0 }.evaluate().unwrap();
    let b = p.problem.bundle("finito", &PresetParams { gamma: row.best_gamma, ..Default::default() }).unwrap();
    push(envelope("finito", &b.with_steps(StepSizes::Constant(row.best_rate_lambda)).unwrap(), row.rate, 300));

    if failures.is_empty() {
        Ok(format!("{}; {SEEDS} seeds", ok.join(", ")))
    } else {
        Err(failures)
    }
}

fn equivalence() -> Outcome {
    let mut devs = Vec::new();
    let p = ridge(10, 5, 0.1, 3);
    let b = p.problem.bundle("saga", &PresetParams::default()).unwrap();
    devs.push(("saga", max_deviation(&engine_iterates(&b, 11, ORACLE_STEPS), &saga_oracle(&p, &b, 11, ORACLE_STEPS))));
    let p = ridge(10, 5, 0.1, 4);
    let b = p.problem.bundle("svrg-avg", &PresetParams { tau: 5, ..Default::default() }).unwrap();
    devs.push(("svrg-avg", max_deviation(&engine_iterates(&b, 12, ORACLE_STEPS), &svrg_avg_oracle(&p, &b, 12, ORACLE_STEPS))));
    let p = ridge(8, 4, 0.1, 5);
    let b = p.problem.bundle("svrg-sched", &PresetParams { tau: 4, ..Default::default() }).unwrap();
    devs.push((
        "svrg-sched",
        max_deviation(&engine_iterates(&b, 13, ORACLE_STEPS), &svrg_sched_oracle(&p, &b, 4, 13, ORACLE_STEPS)),
    ));
    let p = ridge(8, 3, 0.2, 6);
    let gamma = 1.0 / p.lipschitz();
    let b = p.problem.bundle("finito", &PresetParams { gamma: Some(gamma), ..Default::default() }).unwrap();
    devs.push((
        "finito",
        max_deviation(&engine_iterates(&b, 14, ORACLE_STEPS), &finito_oracle(&p, &b, gamma, 14, ORACLE_STEPS)),
    ));
    let p = ridge(6, 3, 0.5, 7);
    let b = p.problem.bundle("sdca", &PresetParams::default()).unwrap();
    devs.push(("sdca", max_deviation(&engine_iterates(&b, 15, ORACLE_STEPS), &sdca_oracle(&p, 0.5, &b, 15, ORACLE_STEPS))));
    let a = gaussian_matrix(20, 10, 8);
    let rhs = (&a * gaussian_matrix(10, 1, 9)).column(0).into_owned();
    let b = presets::kaczmarz(&a, &rhs).unwrap();
    devs.push((
        "kaczmarz",
        max_deviation(&engine_iterates(&b, 16, ORACLE_STEPS), &kaczmarz_oracle(&a, &rhs, &b, 16, ORACLE_STEPS)),
    ));
    let failures: Vec<String> = devs.iter().filter(|(_, d)| !(*d <= ORACLE_TOL)).map(|(n, d)| format!("{n} deviation {d:e}")).collect();
    let worst = devs.iter().map(|d| d.1).fold(0.0, f64::max);
    if failures.is_empty() {
        Ok(format!("6 oracles, {ORACLE_STEPS} steps, max deviation {worst:.1e}"))
    } else {
        Err(failures)
    }
}

fn asynchrony() -> Outcome {
    let mut failures = Vec::new();
    let p = ridge(10, 5, 0.1, 24);
    let saga = p.problem.bundle("saga", &PresetParams::default()).unwrap();
    let a = gaussian_matrix(50, 20, 25);
    let rhs = (&a * gaussian_matrix(20, 1, 26)).column(0).into_owned();
    let kaczmarz = presets::kaczmarz(&a, &rhs).unwrap();
    let mut worst_iters = 0;
    for b in [&saga, &kaczmarz] {
        for (tp, td) in [(3, 3), (8, 8)] {
            for mode in [DelayMode::ConstantMax, DelayMode::Cyclic, DelayMode::UniformRandom] {
                let sched = DelaySchedule::uniform_mode(tp, td, mode, 5).unwrap();
                let lambda = 0.99 * weak_bound_constant(&b.family, &b.law, tp, td).unwrap();
                let run = b.clone().with_schedule(sched).unwrap().with_steps(StepSizes::Constant(lambda)).unwrap();
                let (smart, mut st) = run.start(1).unwrap();
                let out = smart.run(&mut st, &RunOptions::new(StopRule::residual(DELAY_BUDGET, DELAY_RESIDUAL, 10)).stride(DELAY_BUDGET)).unwrap();
                let r = out.trace.last().unwrap().residual;
                let tag = format!("{} ({tp},{td}) {mode:?}", b.name);
                if !(r <= DELAY_RESIDUAL) {
                    failures.push(format!("{tag}: residual {r:.2e} after {} iterations", st.k));
                }
                if st.inconsistency() > tp {
                    failures.push(format!("{tag}: inconsistency {} > {tp}", st.inconsistency()));
                }
                worst_iters = worst_iters.max(st.k);
            }
        }
    }
    let mut max_async_delay = 0;
    for (b, iters) in [(&saga, 20_000), (&kaczmarz, 20_000)] {
        let tau_p = 4;
        let sched = DelaySchedule::new(tau_p, 0, DelayMode::UniformRandom, DelayMode::Zero, 0).unwrap();
        let steps = presets::default_steps(&b.family, &b.law, &b.graph, &sched).unwrap();
        let cfg = AsyncConfig { workers: 4, tau_p, iters, stride: 0 };
        let out = run_async(b.family.clone(), b.law.clone(), b.graph.clone(), steps, b.x0.clone(), b.dual_init.clone(), 3, cfg).unwrap();
        let x = replay(b.family.clone(), b.law.clone(), b.graph.clone(), steps, b.x0.clone(), b.dual_init.clone(), Arc::new(out.log.clone()))
            .unwrap();
        let dev = max_abs_diff(x.as_slice(), out.x.as_slice());
        if !(dev <= REPLAY_TOL) {
            failures.push(format!("async {} replay deviation {dev:e}", b.name));
        }
        let dmax = out.log.max_primal_delay();
        if dmax > tau_p || out.log.inconsistency() > tau_p {
            failures.push(format!("async {} delay {dmax} > {tau_p}", b.name));
        }
        max_async_delay = max_async_delay.max(dmax);
    }
    if failures.is_empty() {
        Ok(format!(
            "12 delayed runs reach {DELAY_RESIDUAL:e} within {worst_iters} iterations; async replay exact, max measured delay {max_async_delay}"
        ))
    } else {
        Err(failures)
    }
}

fn transport() -> Outcome {
    let cases = [
        (ProblemSpec::Lasso { rows: 40, cols: 20, l1: 0.05 }, "prox-saga"),
        (ProblemSpec::EqualityQp { rows: 30, cols: 12, constraints: 3, ridge: 0.1 }, "lin-saga"),
        (ProblemSpec::Fused { dim: 20, weight: 0.3 }, "prox-smart"),
        (ProblemSpec::Fused { dim: 20, weight: 0.3 }, "prox-smart-plus"),
        (ProblemSpec::Ridge { rows: 8, cols: 4, ridge: 2.0 }, "mono"),
    ];
    let mut errs = Vec::new();
    for (spec, preset) in cases {
        let p = spec.generate(17).unwrap();
        let b = p.bundle(preset, &PresetParams::default()).unwrap();
        let got = solve(&b, 3, 400_000, 1e-13);
        errs.push((preset.to_string(), max_abs_diff(&got, p.solution().unwrap())));
    }
    let (b, sol) = saddle_instance(5, None);
    errs.push(("mono saddle".into(), max_abs_diff(&solve(&b, 4, 400_000, 1e-13), &sol)));
    let failures: Vec<String> = errs.iter().filter(|(_, e)| !(*e <= TRANSPORT_TOL)).map(|(n, e)| format!("{n} error {e:e}")).collect();
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    if failures.is_empty() {
        Ok(format!("{} instances, max error {worst:.1e}", errs.len()))
    } else {
        Err(failures)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

fn step_sizes() -> Outcome {
    let mut failures = Vec::new();
    let specs = [
        ProblemSpec::Ridge { rows: 8, cols: 4, ridge: 0.2 },
        ProblemSpec::Lasso { rows: 8, cols: 4, l1: 0.1 },
        ProblemSpec::Logistic { rows: 8, cols: 3, ridge: 0.1 },
        ProblemSpec::LinearSystem { rows: 8, cols: 4 },
        ProblemSpec::Feasibility { sets: 5, dim: 3, empty: false },
        ProblemSpec::EqualityQp { rows: 8, cols: 4, constraints: 2, ridge: 0.1 },
        ProblemSpec::Fused { dim: 5, weight: 0.2 },
    ];
    let mut count = 0;
    for spec in specs {
        let p = spec.generate(5).unwrap();
        for b in PRESETS.iter().filter_map(|name| p.bundle(name, &PresetParams::default()).ok()) {
            count += 1;
            let weak = |tp, td| weak_bound_constant(&b.family, &b.law, tp, td).unwrap();
            for tp in 0..6 {
                for td in 0..6 {
                    let v = weak(tp, td);
                    if !(v > 0.0 && v.is_finite()) || v > weak(tp.saturating_sub(1), td) * (1.0 + 1e-12) || v > weak(tp, td.saturating_sub(1)) * (1.0 + 1e-12) {
                        failures.push(format!("{} weak bound at ({tp},{td}) = {v}", b.name));
                    }
                }
            }
            if !b.family.mu().is_some_and(|m| m > 0.0) {
                continue;
            }
            let plan = RatePlan::default_for(&b.law, &b.graph).unwrap();
            for (tp, td) in [(0, 0), (2, 1), (4, 4)] {
                let mut prev = f64::INFINITY;
                for delta in 0..=tp {
                    let lb = linear_bound(&b.family, &b.law, &b.graph, tp, td, delta, plan).unwrap();
                    if !(lb.lambda > 0.0) || lb.lambda > weak(tp, td) * (1.0 + 1e-12) || lb.lambda > prev * (1.0 + 1e-12) {
                        failures.push(format!("{} linear bound at ({tp},{td},{delta}) = {}", b.name, lb.lambda));
                    }
                    prev = lb.lambda;
                }
                let next = linear_bound(&b.family, &b.law, &b.graph, tp + 1, td + 1, 0, plan).unwrap();
                let here = linear_bound(&b.family, &b.law, &b.graph, tp, td, 0, plan).unwrap();
                if next.lambda > here.lambda * (1.0 + 1e-12) {
                    failures.push(format!("{} linear bound increases with delays", b.name));
                }
            }
        }
    }
    let saga = RateTable::Saga { l: 1.0, mu: 0.1, n: 10.0 }.evaluate().unwrap();
    if !(close(saga.largest.unwrap(), 0.5) && close(saga.best_rate_lambda, 0.2) && close(saga.rate, 0.98)) {
        failures.push(format!("saga row {saga:?}"));
    }
    let kac = RateTable::Kaczmarz { n: 20.0, a_inv_norm: 2.0 }.evaluate().unwrap();
    if !(kac.largest == Some(1.0) && kac.best_rate_lambda == 0.5 && close(kac.rate, 1.0 - 1.0 / 160.0)) {
        failures.push(format!("kaczmarz row {kac:?}"));
    }
    if failures.is_empty() {
        Ok(format!("{count} preset bundles; table rows reproduced"))
    } else {
        Err(failures)
    }
}

fn structure() -> Outcome {
    let mut failures = Vec::new();
    for (label, b) in coherence_cases() {
        let (smart, mut state) = b.start(9).unwrap();
        smart.run(&mut state, &RunOptions::new(StopRule::iterations(3000)).stride(3000)).unwrap();
        let fam = &b.family;
        for i in 0..fam.n() {
            let row = state.duals.row(i);
            for j in (0..fam.m()).filter(|&j| !fam.star()[i][j]) {
                if row[fam.layout().range(j)].iter().any(|&v| v != 0.0) {
                    failures.push(format!("{label}: masked dual y[{i}][{j}] moved"));
                }
            }
        }
    }
    let q = vec![0.5, 0.3, 0.2];
    let p = vec![vec![0.1, 0.4, 0.25], vec![0.2, 0.1, 0.25], vec![0.3, 0.2, 0.25], vec![0.4, 0.3, 0.25]];
    let rho = 0.6;
    let law = SamplingLaw::new(q, p, rho, BlockMode::SingleBlock).unwrap();
    let graph = TriggerGraph::circulant(4, 2).unwrap();
    let mut rng = stream(77, Stream::Verify);
    let mut hits = vec![vec![0u32; 3]; 4];
    for _ in 0..TRIGGER_DRAWS {
        let d = law.draw(&mut rng);
        if d.eps {
            for &t in graph.triggers(d.i) {
                for &j in &d.blocks {
                    hits[t][j] += 1;
                }
            }
        }
    }
    for (i, row) in hits.iter().enumerate() {
        for (j, &h) in row.iter().enumerate() {
            let expected = rho * trigger_prob(&law, &graph, i, j).unwrap();
            let freq = h as f64 / TRIGGER_DRAWS as f64;
            let sigma = (expected * (1.0 - expected) / TRIGGER_DRAWS as f64).sqrt();
            if (freq - expected).abs() > 3.0 * sigma {
                failures.push(format!("trigger ({i},{j}): {freq} vs {expected}"));
            }
        }
    }
    let r = ridge(12, 4, 0.05, 3);
    let b = r.problem.bundle("saga-importance", &PresetParams::default()).unwrap();
    let lips: Vec<f64> = (0..r.n())
        .map(|i| {
            let ai = r.a.row(i).transpose();
            (&ai * ai.transpose() + &r.k).symmetric_eigenvalues().max()
        })
        .collect();
    let mean = lips.iter().sum::<f64>() / lips.len() as f64;
    let bound = sync_weak_bound(&b.family, &b.law).unwrap();
    if (bound - 1.0 / (2.0 * mean)).abs() > 1e-9 * bound {
        failures.push(format!("importance bound {bound} vs {}", 1.0 / (2.0 * mean)));
    }
    if failures.is_empty() {
        Ok("dual sparsity, trigger frequencies and importance bound".into())
    } else {
        Err(failures)
    }
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("coherence", coherence),
        ("rate envelopes", envelopes),
        ("equivalence oracles", equivalence),
        ("asynchrony", asynchrony),
        ("root transport", transport),
        ("step sizes", step_sizes),
        ("structure", structure),
    ];
    let mut unexpected = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {secs:.1}s)", k + 1),
            Err(failures) => {
                let all_known = failures.iter().all(|f| known(f.split_whitespace().next().unwrap_or("")).is_some());
                println!("criterion {} {name}: FAIL ({}; {secs:.1}s)", k + 1, failures.join("; "));
                for f in &failures {
                    if let Some(reason) = f.split_whitespace().next().and_then(known) {
                        println!("    known failure: {reason}");
                    }
                }
                if !all_known {
                    unexpected += 1;
                }
            }
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
