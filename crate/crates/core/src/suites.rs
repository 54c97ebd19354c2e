//! Batch verification suites: coherence, rate envelopes, reference equivalence and replay.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::asyncexec::{replay, run_async, AsyncConfig};
use crate::diagnostics::{envelope_test, Envelope};
use crate::engine::{RunOptions, StepSizes, StopRule};
use crate::error::{Error, Result};
use crate::presets::{default_steps, PresetBundle};
use crate::problems::{PresetParams, Problem, ProblemSpec, PRESETS};
use crate::reference::{self, max_deviation, Ridge};
use crate::schedule::{DelayMode, DelaySchedule};
use crate::stepsize::RateTable;

pub const COHERENCE_POINTS: usize = 10_000;
pub const COHERENCE_SLACK: f64 = 1e-10;
pub const ENVELOPE_SEEDS: u64 = 50;
pub const ENVELOPE_SLACK: f64 = 0.05;
pub const EQUIVALENCE_TOL: f64 = 1e-12;
pub const REPLAY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Coherence,
    Rates,
    Equivalence,
    Replay,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Coherence, Suite::Rates, Suite::Equivalence, Suite::Replay];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Coherence => "coherence",
            Suite::Rates => "rates",
            Suite::Equivalence => "equivalence",
            Suite::Replay => "replay",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite {s}")))
    }
}

/// One measured quantity against its limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: Suite, checks: Vec<Check>) -> Self {
        Self { suite, passed: checks.iter().all(|c| c.passed), checks }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Check {
    Check { name: name.into(), passed: value <= limit, value, limit }
}

/// Runs `suite` on instances generated from `seed`.
pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Coherence => coherence(seed)?,
        Suite::Rates => rates(seed)?,
        Suite::Equivalence => equivalence(seed)?,
        Suite::Replay => replays(seed)?,
    };
    Ok(SuiteReport::new(suite, checks))
}

fn coherence(seed: u64) -> Result<Vec<Check>> {
    let specs = [
        ("ridge", ProblemSpec::Ridge { rows: 10, cols: 5, ridge: 0.1 }),
        ("ridge-strong", ProblemSpec::Ridge { rows: 5, cols: 3, ridge: 2.0 }),
        ("lasso", ProblemSpec::Lasso { rows: 10, cols: 6, l1: 0.05 }),
        ("logistic", ProblemSpec::Logistic { rows: 10, cols: 4, ridge: 0.1 }),
        ("linear-system", ProblemSpec::LinearSystem { rows: 12, cols: 6 }),
        ("feasibility", ProblemSpec::Feasibility { sets: 6, dim: 3, empty: false }),
        ("equality-qp", ProblemSpec::EqualityQp { rows: 10, cols: 5, constraints: 2, ridge: 0.1 }),
        ("fused", ProblemSpec::Fused { dim: 6, weight: 0.3 }),
    ];
    let mut checks = Vec::new();
    for (label, spec) in specs {
        let p = spec.generate(seed)?;
        for name in PRESETS {
            let Ok(b) = p.bundle(name, &PresetParams::default()) else { continue };
            if b.family.known_root().is_none() {
                continue;
            }
            let r = b.family.verify_coherence(COHERENCE_POINTS, COHERENCE_SLACK, seed)?;
            checks.push(Check {
                name: format!("{label}/{name}"),
                passed: r.passed,
                value: r.max_violation,
                limit: COHERENCE_SLACK,
            });
        }
    }
    Ok(checks)
}

fn envelope(name: &str, b: &PresetBundle, rate: f64) -> Result<Check> {
    let iters = 6000;
    let mut traces = Vec::new();
    let mut grid = Vec::new();
    for s in 0..ENVELOPE_SEEDS {
        let (smart, mut st) = b.start(s)?;
        let out = smart.run(&mut st, &RunOptions::new(StopRule::iterations(iters)).stride(iters / 200))?;
        grid = out.trace.iter().map(|r| r.iter).collect();
        traces.push(
            out.trace
                .iter()
                .map(|r| r.dist_sq.ok_or_else(|| Error::Capability("envelope needs a known solution".into())))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let env = Envelope { factor: rate, period: 1, burn_in: 300, slack: ENVELOPE_SLACK };
    let r = envelope_test(&traces, &grid, env)?;
    Ok(Check { name: name.into(), passed: r.pass, value: r.max_ratio, limit: 1.0 })
}

fn ridge(rows: usize, cols: usize, weight: f64, seed: u64) -> Result<Ridge> {
    let p = ProblemSpec::Ridge { rows, cols, ridge: weight }.generate(seed)?;
    Ridge::from_problem(p).ok_or_else(|| Error::Config("not a ridge problem".into()))
}

fn system(rows: usize, cols: usize, seed: u64) -> Result<(Problem, nalgebra::DMatrix<f64>, DVector<f64>)> {
    let p = ProblemSpec::LinearSystem { rows, cols }.generate(seed)?;
    let Problem::LinearSystem { a, b, .. } = &p else { unreachable!() };
    let (a, b) = (reference::matrix(a), DVector::from_column_slice(b));
    Ok((p, a, b))
}

fn rates(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let p = ridge(10, 5, 0.1, seed)?;
    let (l, mu) = (p.lipschitz(), p.strong_convexity());
    let row = RateTable::Saga { l, mu, n: 10.0 }.evaluate()?;
    let b = p.problem.bundle("saga", &PresetParams::default())?.with_steps(StepSizes::Constant(row.best_rate_lambda))?;
    checks.push(envelope("saga", &b, row.rate)?);

    let row = RateTable::SvrgSched { l, mu, tau: 4.0 }.evaluate()?;
    let b = p
        .problem
        .bundle("svrg-sched", &PresetParams { tau: 4, ..Default::default() })?
        .with_steps(StepSizes::Constant(row.best_rate_lambda))?;
    checks.push(envelope("svrg-sched", &b, row.rate)?);

    let (sys, a, _) = system(50, 20, seed)?;
    let mut normalized = a.clone();
    for mut r in normalized.row_iter_mut() {
        let n = r.norm();
        r /= n;
    }
    let smin = normalized.singular_values().min();
    let row = RateTable::Kaczmarz { n: 50.0, a_inv_norm: 1.0 / smin }.evaluate()?;
    let b = sys.bundle("kaczmarz", &PresetParams::default())?.with_steps(StepSizes::Constant(row.best_rate_lambda))?;
    checks.push(envelope("kaczmarz", &b, row.rate)?);

    let p = ridge(8, 4, 0.5, seed)?;
    let row = RateTable::Finito { l: p.lipschitz(), mu_hat: p.strong_convexity(), n: 8.0 }.evaluate()?;
    let b = p
        .problem
        .bundle("finito", &PresetParams { gamma: row.best_gamma, ..Default::default() })?
        .with_steps(StepSizes::Constant(row.best_rate_lambda))?;
    checks.push(envelope("finito", &b, row.rate)?);
    Ok(checks)
}

fn equivalence(seed: u64) -> Result<Vec<Check>> {
    const STEPS: usize = 1000;
    let mut checks = Vec::new();
    let mut push = |name: &str, engine: Vec<Vec<f64>>, oracle: Vec<Vec<f64>>| {
        checks.push(at_most(name, max_deviation(&engine, &oracle), EQUIVALENCE_TOL));
    };
    let p = ridge(10, 5, 0.1, seed)?;
    let b = p.problem.bundle("saga", &PresetParams::default())?;
    push("saga", reference::engine_iterates(&b, seed, STEPS)?, reference::saga_oracle(&p, &b, seed, STEPS));
    let b = p.problem.bundle("svrg-avg", &PresetParams { tau: 5, ..Default::default() })?;
    push("svrg-avg", reference::engine_iterates(&b, seed, STEPS)?, reference::svrg_avg_oracle(&p, &b, seed, STEPS));
    let b = p.problem.bundle("svrg-sched", &PresetParams { tau: 4, ..Default::default() })?;
    push("svrg-sched", reference::engine_iterates(&b, seed, STEPS)?, reference::svrg_sched_oracle(&p, &b, 4, seed, STEPS));
    let p = ridge(8, 3, 0.2, seed)?;
    let gamma = 1.0 / p.lipschitz();
    let b = p.problem.bundle("finito", &PresetParams { gamma: Some(gamma), ..Default::default() })?;
    push("finito", reference::engine_iterates(&b, seed, STEPS)?, reference::finito_oracle(&p, &b, gamma, seed, STEPS));
    let p = ridge(6, 3, 0.5, seed)?;
    let b = p.problem.bundle("sdca", &PresetParams::default())?;
    push("sdca", reference::engine_iterates(&b, seed, STEPS)?, reference::sdca_oracle(&p, 0.5, &b, seed, STEPS));
    let (sys, a, rhs) = system(20, 10, seed)?;
    let b = sys.bundle("kaczmarz", &PresetParams::default())?;
    push("kaczmarz", reference::engine_iterates(&b, seed, STEPS)?, reference::kaczmarz_oracle(&a, &rhs, &b, seed, STEPS));
    Ok(checks)
}

fn replays(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let p = ridge(10, 5, 0.1, seed)?;
    let saga = p.problem.bundle("coordinate-saga", &PresetParams::default())?;
    let (sys, _, _) = system(50, 20, seed)?;
    let kaczmarz = sys.bundle("kaczmarz", &PresetParams::default())?;
    for b in [&saga, &kaczmarz] {
        let sched = DelaySchedule::uniform_mode(4, 4, DelayMode::Cyclic, seed)?;
        let delayed = b.clone().with_schedule(sched)?;
        let (smart, mut st) = delayed.start(seed)?;
        let out = smart.run(&mut st, &RunOptions::new(StopRule::iterations(2000)).record())?;
        let log = Arc::new(out.replay.ok_or_else(|| Error::Capability("run did not record".into()))?);
        let again = delayed.clone().with_schedule(DelaySchedule::recorded(log))?.with_steps(delayed.steps)?;
        let (rs, mut rst) = again.start(seed.wrapping_add(1))?;
        rs.run(&mut rst, &RunOptions::new(StopRule::iterations(2000)))?;
        checks.push(at_most(format!("delayed/{}", b.name), max_abs(st.x.as_slice(), rst.x.as_slice()), REPLAY_TOL));

        let tau_p = 4;
        let sched = DelaySchedule::new(tau_p, 0, DelayMode::UniformRandom, DelayMode::Zero, seed)?;
        let steps = default_steps(&b.family, &b.law, &b.graph, &sched)?;
        let cfg = AsyncConfig { workers: 4, tau_p, iters: 5000, stride: 0 };
        let out = run_async(b.family.clone(), b.law.clone(), b.graph.clone(), steps, b.x0.clone(), b.dual_init.clone(), seed, cfg)?;
        let x = replay(b.family.clone(), b.law.clone(), b.graph.clone(), steps, b.x0.clone(), b.dual_init.clone(), Arc::new(out.log.clone()))?;
        checks.push(at_most(format!("async/{}", b.name), max_abs(x.as_slice(), out.x.as_slice()), REPLAY_TOL));
        checks.push(at_most(format!("async/{} delay", b.name), out.log.max_primal_delay() as f64, tau_p as f64));
    }
    Ok(checks)
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}
