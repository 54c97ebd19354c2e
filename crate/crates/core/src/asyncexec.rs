//! Lock-per-block asynchronous execution with measured delays.
//!
//! Workers draw their own samples, read every block without a global lock,
//! evaluate, and then commit through a single mutex. At commit time the delay
//! of each block is the number of commits since the value that was read was
//! superseded; reads staler than `tau_p` are discarded and retried. Every
//! commit is logged so the run can be replayed bit for bit by the synchronous
//! engine under [`DelaySchedule::recorded`].

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::blockspace::BlockVector;
use crate::engine::{DualInit, Evaluations, RunOptions, Smart, SmartState, StepSizes, StopRule, TraceRow};
use crate::error::{Error, Result};
use crate::operators::OperatorFamily;
use crate::rng::{stream, Stream};
use crate::sampling::{Draw, SamplingLaw, TriggerGraph};
use crate::schedule::{DelayMode, DelaySchedule, ReplayHeader, ReplayLog, ReplayRecord};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SMART_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsyncConfig {
    pub workers: usize,
    pub tau_p: usize,
    pub iters: u64,
    /// Trace sampling period; 0 records only the endpoints.
    pub stride: u64,
}

impl AsyncConfig {
    /// Worker count after applying the environment cap.
    pub fn effective_workers(&self) -> usize {
        let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&c| c > 0);
        cap.map_or(self.workers, |c| self.workers.min(c)).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct AsyncOutput {
    pub x: BlockVector,
    pub log: ReplayLog,
    pub trace: Vec<TraceRow>,
    /// Reads discarded for exceeding `tau_p`.
    pub retries: u64,
    pub workers: usize,
}

struct Slot {
    data: Vec<f64>,
    /// Iterations whose commit wrote this block, in order.
    writes: Vec<u64>,
}

struct Shared {
    smart: Smart,
    slots: Vec<RwLock<Slot>>,
    commit: Mutex<Committer>,
    stop: AtomicBool,
    retries: AtomicU64,
    iters: u64,
    stride: u64,
    tau_p: usize,
}

struct Committer {
    state: SmartState,
    log: ReplayLog,
    trace: Vec<TraceRow>,
    failure: Option<Error>,
}

struct Snapshot {
    x: BlockVector,
    versions: Vec<usize>,
}

impl Shared {
    fn snapshot(&self, out: &mut Snapshot) {
        let layout = self.smart.family().layout().clone();
        for (j, slot) in self.slots.iter().enumerate() {
            let s = slot.read();
            out.x.data_mut()[layout.range(j)].copy_from_slice(&s.data);
            out.versions[j] = s.writes.len();
        }
    }

    /// Delays of a snapshot against commit `k`, or `None` if one exceeds `tau_p`.
    fn delays(&self, snap: &Snapshot, k: u64, out: &mut Vec<usize>) -> Option<()> {
        out.clear();
        for (slot, &v) in self.slots.iter().zip(&snap.versions) {
            let s = slot.read();
            let d = s.writes.get(v).map_or(0, |&w| (k - w) as usize);
            if d > self.tau_p {
                return None;
            }
            out.push(d);
        }
        Some(())
    }

    fn row(&self, state: &SmartState, lambda: f64, i: Option<usize>, eps: bool, delay: usize) -> Result<TraceRow> {
        let fam = self.smart.family();
        let dist_sq = match fam.solution() {
            Some(s) => Some(fam.metric().norm_sq(&state.x.sub(&s.project(&state.x)?)?)?),
            None => None,
        };
        Ok(TraceRow {
            iter: state.k,
            residual: self.smart.residual(&state.x)?,
            dist_sq,
            lambda,
            i_k: i,
            eps_k: eps,
            delay_max: delay,
        })
    }

    fn worker(&self, w: u32, seed: u64) {
        let fam = self.smart.family().clone();
        let mut rng = stream(seed, Stream::Worker(w));
        let mut draw = Draw::default();
        let mut snap = Snapshot { x: BlockVector::zeros(fam.layout().clone()), versions: vec![0; fam.m()] };
        let mut evals = Evaluations::default();
        let mut delays = Vec::with_capacity(fam.m());
        let m = fam.m();
        while !self.stop.load(Ordering::Acquire) {
            self.smart.law().draw_into(&mut rng, &mut draw);
            self.snapshot(&mut snap);
            if !draw.blocks.is_empty() {
                if let Err(e) = evals.compute(&fam, self.smart.graph(), &draw, &snap.x) {
                    self.fail(e);
                    return;
                }
            }
            thread::yield_now();
            let mut c = self.commit.lock();
            if self.stop.load(Ordering::Acquire) {
                return;
            }
            let k = c.state.k;
            if draw.blocks.is_empty() {
                delays.clear();
                delays.resize(m, 0);
            } else if self.delays(&snap, k, &mut delays).is_none() {
                self.retries.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            if let Err(e) = self.commit_one(&mut c, &draw, &evals, &delays) {
                c.failure.get_or_insert(e);
                self.stop.store(true, Ordering::Release);
                return;
            }
            if c.state.k >= self.iters {
                self.stop.store(true, Ordering::Release);
            }
        }
    }

    fn commit_one(&self, c: &mut Committer, draw: &Draw, evals: &Evaluations, delays: &[usize]) -> Result<()> {
        let k = c.state.k;
        let lambda = self.smart.steps().at(k);
        let m = self.smart.family().m();
        let (i, dmax) = if draw.blocks.is_empty() {
            c.state.k += 1;
            (None, 0)
        } else {
            c.state.set_delays(delays);
            let info = self.smart.apply(&mut c.state, draw, evals, lambda)?;
            let layout = self.smart.family().layout().clone();
            for &j in &draw.blocks {
                let mut s = self.slots[j].write();
                s.data.copy_from_slice(&c.state.x.as_slice()[layout.range(j)]);
                s.writes.push(k);
            }
            (info.i, info.delay_max)
        };
        c.log.records.push(ReplayRecord {
            k,
            i: draw.i as u32,
            eps: draw.eps,
            blocks: draw.blocks.iter().map(|&b| b as u32).collect(),
            d: delays.iter().map(|&d| d as u8).collect(),
            e: vec![0; m],
        });
        let done = c.state.k;
        if (self.stride > 0 && done.is_multiple_of(self.stride)) || done == self.iters {
            let r = self.row(&c.state, lambda, i, draw.eps, dmax)?;
            c.trace.push(r);
        }
        Ok(())
    }

    fn fail(&self, e: Error) {
        let mut c = self.commit.lock();
        c.failure.get_or_insert(e);
        self.stop.store(true, Ordering::Release);
    }
}

/// Realizes an asynchronous run of `family` with dual delays of zero.
#[allow(clippy::too_many_arguments)]
pub fn run_async(
    family: Arc<OperatorFamily>,
    law: SamplingLaw,
    graph: TriggerGraph,
    steps: StepSizes,
    x0: BlockVector,
    dual_init: DualInit,
    seed: u64,
    cfg: AsyncConfig,
) -> Result<AsyncOutput> {
    let schedule = DelaySchedule::new(cfg.tau_p, 0, DelayMode::UniformRandom, DelayMode::Zero, seed)?;
    let smart = Smart::new(family.clone(), law, graph, schedule, steps)?;
    let state = smart.init(x0, dual_init, seed)?;
    let layout = family.layout().clone();
    let slots = (0..layout.m())
        .map(|j| RwLock::new(Slot { data: state.x.block(j).to_vec(), writes: Vec::new() }))
        .collect();
    let header = ReplayHeader { tau_p: cfg.tau_p, tau_d: 0, mode: "async".into(), m: layout.m() };
    let workers = cfg.effective_workers();
    let shared = Shared {
        slots,
        commit: Mutex::new(Committer { state, log: ReplayLog::new(header), trace: Vec::new(), failure: None }),
        stop: AtomicBool::new(cfg.iters == 0),
        retries: AtomicU64::new(0),
        iters: cfg.iters,
        stride: cfg.stride,
        tau_p: cfg.tau_p,
        smart,
    };
    {
        let mut c = shared.commit.lock();
        let lambda = shared.smart.steps().at(0);
        let r = shared.row(&c.state, lambda, None, false, 0)?;
        c.trace.push(r);
    }
    let panics: Vec<String> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let sh = &shared;
                s.spawn(move || catch_unwind(AssertUnwindSafe(|| sh.worker(w as u32, seed))))
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .filter_map(|(w, h)| match h.join() {
                Ok(Ok(())) => None,
                Ok(Err(p)) | Err(p) => {
                    shared.stop.store(true, Ordering::Release);
                    let msg = p
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| p.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "unknown payload".into());
                    Some(format!("worker {w} panicked: {msg}"))
                }
            })
            .collect()
    });
    if !panics.is_empty() {
        return Err(Error::Numerical(panics.join("; ")));
    }
    let retries = shared.retries.load(Ordering::Relaxed);
    let c = shared.commit.into_inner();
    if let Some(e) = c.failure {
        return Err(e);
    }
    Ok(AsyncOutput { x: c.state.x, log: c.log, trace: c.trace, retries, workers })
}

/// Re-runs a recorded asynchronous run through the synchronous engine.
pub fn replay(
    family: Arc<OperatorFamily>,
    law: SamplingLaw,
    graph: TriggerGraph,
    steps: StepSizes,
    x0: BlockVector,
    dual_init: DualInit,
    log: Arc<ReplayLog>,
) -> Result<BlockVector> {
    let iters = log.records.len() as u64;
    let smart = Smart::new(family, law, graph, DelaySchedule::recorded(log), steps)?;
    let mut state = smart.init(x0, dual_init, 0)?;
    smart.run(&mut state, &RunOptions::new(StopRule::iterations(iters)).stride(iters.max(1)))?;
    Ok(state.x)
}
