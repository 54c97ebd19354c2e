//! Executes a [`RunConfig`] and writes its trace, replay log and summary.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smart::asyncexec::{self, run_async, AsyncConfig};
use smart::diagnostics::fit_rate;
use smart::engine::{write_trace_csv, RunOptions, StepSizes, StopReason, StopRule, TraceRow};
use smart::presets::{step_rule, BoundSource, PresetBundle};
use smart::problems::Problem;
use smart::schedule::{DelayMode, DelaySchedule, ReplayLog};

use crate::config::{Mode, RunConfig};
use crate::error::CliError;

pub const TRACE_FILE: &str = "trace.csv";
pub const REPLAY_FILE: &str = "replay.bin";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

/// Largest per-coordinate gap accepted by [`verify_replay`].
pub const REPLAY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub preset: String,
    pub problem: String,
    pub mode: Mode,
    pub seed: u64,
    pub iterations: u64,
    pub stopped: String,
    pub final_residual: f64,
    pub final_dist_sq: Option<f64>,
    /// Per-iteration factor fitted to the squared distance (or squared residual) trace.
    pub fitted_factor: Option<f64>,
    /// Per-iteration factor the step-size bound guarantees, when it applies.
    pub predicted_factor: Option<f64>,
    pub lambda: f64,
    /// Largest step the weak-convergence bound allows under this schedule.
    pub lambda_bound: f64,
    /// `linear-rate`, `weak` or `user`.
    pub bound_source: String,
    pub max_delay: usize,
    pub inconsistency: usize,
    pub workers: Option<usize>,
    pub retries: Option<u64>,
    /// Max abs gap between the transported iterate and the problem's reference solution.
    pub solution_error: Option<f64>,
    pub warnings: Vec<String>,
    pub x: Vec<f64>,
    pub trace: PathBuf,
    pub replay: Option<PathBuf>,
}

fn schedule_for(cfg: &RunConfig) -> Result<DelaySchedule, CliError> {
    let s = &cfg.schedule;
    Ok(match s.mode {
        Mode::Sync => DelaySchedule::zero(),
        Mode::Delay => DelaySchedule::uniform_mode(s.tau_p, s.tau_d, s.delay_mode, cfg.seed)?,
        Mode::Async => DelaySchedule::new(s.tau_p, 0, DelayMode::UniformRandom, DelayMode::Zero, cfg.seed)?,
    })
}

fn bundle_for(cfg: &RunConfig, problem: &Problem) -> Result<PresetBundle, CliError> {
    Ok(problem.bundle(&cfg.preset, &cfg.params)?.with_schedule(schedule_for(cfg)?)?)
}

fn fitted_factor(trace: &[TraceRow]) -> Option<f64> {
    let values: Vec<(u64, f64)> = trace
        .iter()
        .map(|r| (r.iter, r.dist_sq.unwrap_or(r.residual * r.residual)))
        .collect();
    let first = values.first()?.1.max(f64::MIN_POSITIVE);
    let (iters, vals): (Vec<u64>, Vec<f64>) = values.into_iter().filter(|(_, v)| *v > first * 1e-24).unzip();
    fit_rate(&iters, &vals).ok().map(|f| f.factor)
}

struct Outcome {
    trace: Vec<TraceRow>,
    log: Option<ReplayLog>,
    x: Vec<f64>,
    transported: Vec<f64>,
    stopped: StopReason,
    iterations: u64,
    max_delay: usize,
    inconsistency: usize,
    workers: Option<usize>,
    retries: Option<u64>,
}

fn stop_rule(cfg: &RunConfig) -> StopRule {
    match cfg.stop_resid {
        Some(tol) => StopRule::residual(cfg.iters, tol, cfg.effective_stride().min(100)),
        None => StopRule::iterations(cfg.iters),
    }
}

fn run_engine(cfg: &RunConfig, b: &PresetBundle, warnings: &mut Vec<String>) -> Result<Outcome, CliError> {
    let (smart, mut st) = b.start(cfg.seed)?;
    let mut opts = RunOptions::new(stop_rule(cfg)).stride(cfg.effective_stride());
    if b.schedule.dual_uniform_in_i() {
        opts = opts.record();
    } else {
        warnings.push("replay log not written: dual delays vary across operators".into());
    }
    let out = smart.run(&mut st, &opts)?;
    Ok(Outcome {
        transported: b.transport.apply(&st.x)?,
        x: st.x.as_slice().to_vec(),
        trace: out.trace,
        log: out.replay,
        stopped: out.stopped,
        iterations: st.k,
        max_delay: st.max_primal_delay(),
        inconsistency: st.inconsistency(),
        workers: None,
        retries: None,
    })
}

fn run_threads(cfg: &RunConfig, b: &PresetBundle, warnings: &mut Vec<String>) -> Result<Outcome, CliError> {
    if cfg.stop_resid.is_some() {
        warnings.push("async mode runs the full iteration budget; stop residual ignored".into());
    }
    let acfg = AsyncConfig {
        workers: cfg.schedule.workers,
        tau_p: cfg.schedule.tau_p,
        iters: cfg.iters,
        stride: cfg.effective_stride(),
    };
    let out = run_async(b.family.clone(), b.law.clone(), b.graph.clone(), b.steps, b.x0.clone(), b.dual_init.clone(), cfg.seed, acfg)?;
    Ok(Outcome {
        transported: b.transport.apply(&out.x)?,
        x: out.x.as_slice().to_vec(),
        iterations: out.log.records.len() as u64,
        max_delay: out.log.max_primal_delay(),
        inconsistency: out.log.inconsistency(),
        trace: out.trace,
        log: Some(out.log),
        stopped: StopReason::MaxIterations,
        workers: Some(out.workers),
        retries: Some(out.retries),
    })
}

/// Runs `cfg`, writes every output file into `cfg.out` and returns the summary.
pub fn execute(cfg: &RunConfig) -> Result<Summary, CliError> {
    cfg.validate()?;
    let problem = cfg.problem.load()?;
    let mut bundle = bundle_for(cfg, &problem)?;
    let rule = step_rule(&bundle.family, &bundle.law, &bundle.graph, &bundle.schedule)?;
    let mut warnings = Vec::new();
    let (lambda, source, predicted) = match cfg.lambda {
        Some(l) => {
            if l > rule.weak_bound {
                warnings.push(format!("step size {l} exceeds the computed bound {}", rule.weak_bound));
            }
            bundle = bundle.with_steps(StepSizes::Constant(l))?;
            (l, "user".to_string(), None)
        }
        None => {
            let source = match rule.source {
                BoundSource::LinearRate => "linear-rate",
                BoundSource::Weak => "weak",
            };
            (bundle.steps.at(0), source.to_string(), rule.predicted_factor)
        }
    };
    let outcome = match cfg.schedule.mode {
        Mode::Sync | Mode::Delay => run_engine(cfg, &bundle, &mut warnings)?,
        Mode::Async => run_threads(cfg, &bundle, &mut warnings)?,
    };

    fs::create_dir_all(&cfg.out)?;
    let trace_path = cfg.out.join(TRACE_FILE);
    write_trace_csv(&outcome.trace, BufWriter::new(File::create(&trace_path)?))?;
    let replay_path = match &outcome.log {
        Some(log) => {
            let p = cfg.out.join(REPLAY_FILE);
            log.save(&p)?;
            Some(p)
        }
        None => None,
    };
    fs::write(cfg.out.join(CONFIG_FILE), cfg.to_json()?)?;

    let last = outcome.trace.last().ok_or_else(|| CliError::Numerical("empty trace".into()))?;
    let summary = Summary {
        preset: cfg.preset.clone(),
        problem: problem.kind().into(),
        mode: cfg.schedule.mode,
        seed: cfg.seed,
        iterations: outcome.iterations,
        stopped: match outcome.stopped {
            StopReason::MaxIterations => "max-iterations".into(),
            StopReason::Residual => "residual".into(),
        },
        final_residual: last.residual,
        final_dist_sq: last.dist_sq,
        fitted_factor: fitted_factor(&outcome.trace),
        predicted_factor: predicted,
        lambda,
        lambda_bound: rule.weak_bound,
        bound_source: source,
        max_delay: outcome.max_delay,
        inconsistency: outcome.inconsistency,
        workers: outcome.workers,
        retries: outcome.retries,
        solution_error: bundle.solution.as_deref().filter(|s| s.len() == outcome.transported.len()).map(|s| {
            s.iter().zip(&outcome.transported).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        }),
        warnings,
        x: outcome.x,
        trace: trace_path,
        replay: replay_path,
    };
    fs::write(cfg.out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Result of re-running a recorded run through the deterministic engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub passed: bool,
    pub records: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
}

/// Replays the run stored in `dir` and compares its final iterate.
pub fn verify_replay(dir: &Path) -> Result<ReplayReport, CliError> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let summary: Summary = serde_json::from_str(&fs::read_to_string(dir.join(SUMMARY_FILE))?)?;
    let log = Arc::new(ReplayLog::load(&dir.join(REPLAY_FILE))?);
    let problem = cfg.problem.load()?;
    let bundle = bundle_for(&cfg, &problem)?;
    let steps = StepSizes::Constant(summary.lambda);
    let x = match cfg.schedule.mode {
        Mode::Async => asyncexec::replay(
            bundle.family.clone(),
            bundle.law.clone(),
            bundle.graph.clone(),
            steps,
            bundle.x0.clone(),
            bundle.dual_init.clone(),
            log.clone(),
        )?
        .into_vec(),
        Mode::Sync | Mode::Delay => {
            let iters = log.records.len() as u64;
            let b = bundle.with_schedule(DelaySchedule::recorded(log.clone()))?.with_steps(steps)?;
            let (smart, mut st) = b.start(cfg.seed)?;
            smart.run(&mut st, &RunOptions::new(StopRule::iterations(iters)).stride(iters.max(1)))?;
            st.x.into_vec()
        }
    };
    let max_deviation = if x.len() == summary.x.len() {
        x.iter().zip(&summary.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(ReplayReport { passed: max_deviation <= REPLAY_TOL, records: log.records.len(), max_deviation, tolerance: REPLAY_TOL })
}
