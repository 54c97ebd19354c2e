//! The SMART iteration: sampled, delayed primal updates and triggered dual refreshes.
//!
//! One step at iteration `k` draws `(S_k, i_k, eps_k)`, reads the delayed point
//! `x^{k-d_k}`, evaluates the needed operator blocks there, and then applies
//!
//! ```text
//! x_j <- x_j - lambda/(q_j m) [ (n p_ij)^-1 S_i(x^)_j - (n p_ij)^-1 y_ij^{k-e} + n^-1 sum_l y_lj^{k-e} ]
//! ```
//!
//! for `j` in `S_k`, followed by `y_{i',j} <- S_{i'}(x^)_j` for every `i'`
//! triggered by `i_k` (when `eps_k = 1`) and `j` in `S_k` with a nonzero star entry.

use std::io::Write;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blockspace::BlockVector;
use crate::error::{Error, Result};
use crate::operators::OperatorFamily;
use crate::rng::{stream, Stream};
use crate::sampling::{Draw, SamplingLaw, TriggerGraph};
use crate::schedule::{DelaySchedule, ReplayHeader, ReplayLog, ReplayRecord, VersionedSlots};

/// Dual refreshes between exact recomputations of the running sums.
pub const SUM_REFRESH_PERIOD: usize = 1000;

/// Step-size rule `lambda_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSizes {
    Constant(f64),
    /// Sawtooth from `hi` down to `lo` over `period` iterations.
    Band { lo: f64, hi: f64, period: u64 },
}

impl StepSizes {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSizes::Constant(l) => l > 0.0 && l.is_finite(),
            StepSizes::Band { lo, hi, period } => lo > 0.0 && lo <= hi && hi.is_finite() && period >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step sizes {self:?}")))
        }
    }

    pub fn at(&self, k: u64) -> f64 {
        match *self {
            StepSizes::Constant(l) => l,
            StepSizes::Band { lo, hi, period } => {
                if period <= 1 {
                    hi
                } else {
                    let t = (k % period) as f64 / (period - 1) as f64;
                    hi - (hi - lo) * t
                }
            }
        }
    }

    /// `(lambda_lo, lambda_hi)`
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            StepSizes::Constant(l) => (l, l),
            StepSizes::Band { lo, hi, .. } => (lo, hi),
        }
    }
}

/// Table of dual variables `y_{i,j}` with running block sums.
#[derive(Debug, Clone)]
pub struct DualTable {
    n: usize,
    total: usize,
    y: Vec<f64>,
    sum: Vec<f64>,
    since_refresh: usize,
}

impl DualTable {
    pub fn zeros(n: usize, total: usize) -> Self {
        Self { n, total, y: vec![0.0; n * total], sum: vec![0.0; total], since_refresh: 0 }
    }

    /// `y_i = S_i(point)` on entries with a nonzero star, zero elsewhere.
    pub fn at_point(family: &OperatorFamily, point: &BlockVector) -> Result<Self> {
        let layout = family.layout();
        let mut t = Self::zeros(family.n(), layout.total());
        for (i, v) in family.eval_all(point)?.into_iter().enumerate() {
            for j in 0..layout.m() {
                if family.star()[i][j] {
                    let r = layout.range(j);
                    t.y[i * t.total + r.start..i * t.total + r.end].copy_from_slice(&v[r]);
                }
            }
        }
        t.refresh();
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `y_i` as a full-length slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.y[i * self.total..(i + 1) * self.total]
    }

    /// Maintained `sum_i y_i`.
    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    /// Exact `sum_i y_i`.
    pub fn recomputed_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.total];
        for i in 0..self.n {
            for (a, b) in s.iter_mut().zip(self.row(i)) {
                *a += b;
            }
        }
        s
    }

    fn refresh(&mut self) {
        self.sum = self.recomputed_sum();
        self.since_refresh = 0;
    }
}

/// Initial dual values.
#[derive(Debug, Clone)]
pub enum DualInit {
    Zero,
    /// `y_i^0 = S_i(phi)` on the star pattern.
    AtPoint(BlockVector),
    /// `y_i^0 = S_i(x^0)` on the star pattern.
    AtStart,
}

/// Everything that evolves across iterations.
#[derive(Debug, Clone)]
pub struct SmartState {
    pub x: BlockVector,
    pub duals: DualTable,
    pub k: u64,
    primal_hist: VersionedSlots,
    dual_hist: VersionedSlots,
    sum_hist: VersionedSlots,
    rng: ChaCha8Rng,
    draw: Draw,
    delays: Vec<usize>,
    read: BlockVector,
    evals: Evaluations,
    max_primal_delay: usize,
    max_dual_delay: usize,
    inconsistency: usize,
}

impl SmartState {
    pub fn max_primal_delay(&self) -> usize {
        self.max_primal_delay
    }

    pub fn max_dual_delay(&self) -> usize {
        self.max_dual_delay
    }

    pub(crate) fn set_delays(&mut self, delays: &[usize]) {
        self.delays.clear();
        self.delays.extend_from_slice(delays);
    }

    /// Largest `max_j d_kj - min_j d_kj` seen so far.
    pub fn inconsistency(&self) -> usize {
        self.inconsistency
    }
}

/// Operator values at the read point for the operators one step needs.
#[derive(Debug, Clone, Default)]
pub struct Evaluations {
    ids: Vec<usize>,
    bufs: Vec<Vec<f64>>,
    used: usize,
}

impl Evaluations {
    pub fn clear(&mut self) {
        self.used = 0;
        self.ids.clear();
    }

    fn slot(&mut self, i: usize, total: usize) -> &mut Vec<f64> {
        if self.used == self.bufs.len() {
            self.bufs.push(vec![0.0; total]);
        }
        self.ids.push(i);
        self.used += 1;
        &mut self.bufs[self.used - 1]
    }

    pub fn get(&self, i: usize) -> Option<&[f64]> {
        self.ids.iter().position(|&v| v == i).map(|p| self.bufs[p].as_slice())
    }

    /// Evaluates the operators `draw` needs at `point`.
    pub fn compute(
        &mut self,
        family: &OperatorFamily,
        graph: &TriggerGraph,
        draw: &Draw,
        point: &BlockVector,
    ) -> Result<()> {
        self.clear();
        let total = family.layout().total();
        let mut wanted = vec![draw.i];
        if draw.eps {
            for &t in graph.triggers(draw.i) {
                if t != draw.i && draw.blocks.iter().any(|&j| family.star()[t][j]) {
                    wanted.push(t);
                }
            }
        }
        for i in wanted {
            let buf = self.slot(i, total);
            family.op(i).eval_blocks(point, &draw.blocks, buf)?;
        }
        Ok(())
    }
}

/// Per-iteration summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub k: u64,
    pub i: Option<usize>,
    pub eps: bool,
    pub lambda: f64,
    pub delay_max: usize,
}

/// The iteration bound to a family, law, graph, schedule and step rule.
#[derive(Debug, Clone)]
pub struct Smart {
    family: Arc<OperatorFamily>,
    law: SamplingLaw,
    graph: TriggerGraph,
    schedule: DelaySchedule,
    steps: StepSizes,
}

impl Smart {
    pub fn new(
        family: Arc<OperatorFamily>,
        law: SamplingLaw,
        graph: TriggerGraph,
        schedule: DelaySchedule,
        steps: StepSizes,
    ) -> Result<Self> {
        law.check_support(&family)?;
        if graph.n() != family.n() {
            return Err(Error::Dimension(format!(
                "graph has {} vertices, family {} operators",
                graph.n(),
                family.n()
            )));
        }
        steps.validate()?;
        Ok(Self { family, law, graph, schedule, steps })
    }

    pub fn family(&self) -> &Arc<OperatorFamily> {
        &self.family
    }

    pub fn law(&self) -> &SamplingLaw {
        &self.law
    }

    pub fn graph(&self) -> &TriggerGraph {
        &self.graph
    }

    pub fn schedule(&self) -> &DelaySchedule {
        &self.schedule
    }

    pub fn steps(&self) -> &StepSizes {
        &self.steps
    }

    pub fn with_schedule(mut self, schedule: DelaySchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_steps(mut self, steps: StepSizes) -> Result<Self> {
        steps.validate()?;
        self.steps = steps;
        Ok(self)
    }

    pub fn init(&self, x0: BlockVector, duals: DualInit, seed: u64) -> Result<SmartState> {
        let layout = self.family.layout();
        if x0.layout().as_ref() != layout.as_ref() {
            return Err(Error::Dimension("initial point layout".into()));
        }
        let duals = match duals {
            DualInit::Zero => DualTable::zeros(self.family.n(), layout.total()),
            DualInit::AtPoint(p) => DualTable::at_point(&self.family, &p)?,
            DualInit::AtStart => DualTable::at_point(&self.family, &x0)?,
        };
        let (n, m) = (self.family.n(), layout.m());
        let tau_d = self.schedule.tau_d();
        Ok(SmartState {
            read: x0.clone(),
            x: x0,
            duals,
            k: 0,
            primal_hist: VersionedSlots::new(m, self.schedule.tau_p()),
            dual_hist: VersionedSlots::new(n * m, tau_d),
            sum_hist: VersionedSlots::new(m, tau_d),
            rng: stream(seed, Stream::Sampling),
            draw: Draw::default(),
            delays: Vec::with_capacity(m),
            evals: Evaluations::default(),
            max_primal_delay: 0,
            max_dual_delay: 0,
            inconsistency: 0,
        })
    }

    fn next_draw(&self, state: &mut SmartState) -> Result<()> {
        match self.schedule.log() {
            Some(log) => {
                let rec = log
                    .records
                    .get(state.k as usize)
                    .filter(|r| r.k == state.k)
                    .ok_or_else(|| Error::Delay(format!("replay log ends before iteration {}", state.k)))?;
                state.draw = rec.draw();
            }
            None => self.law.draw_into(&mut state.rng, &mut state.draw),
        }
        Ok(())
    }

    /// Builds `x^{k - d_k}` into `state.read`; returns false when `d_k = 0`.
    fn delayed_read(&self, state: &mut SmartState) -> Result<bool> {
        let layout = self.family.layout().clone();
        self.schedule.primal_delays(state.k, layout.m(), &mut state.delays)?;
        if let Some(&d) = state.delays.iter().find(|&&d| d > self.schedule.tau_p()) {
            return Err(Error::Delay(format!("delay {d} exceeds tau_p = {}", self.schedule.tau_p())));
        }
        if state.delays.iter().all(|&d| d == 0) {
            return Ok(false);
        }
        let k = state.k as i64;
        for j in 0..layout.m() {
            let r = layout.range(j);
            let v = state.primal_hist.read(j, &state.x.as_slice()[r.clone()], k - state.delays[j] as i64)?;
            state.read.data_mut()[r].copy_from_slice(v);
        }
        Ok(true)
    }

    /// One iteration.
    pub fn step(&self, state: &mut SmartState) -> Result<StepInfo> {
        self.next_draw(state)?;
        let lambda = self.steps.at(state.k);
        if state.draw.blocks.is_empty() {
            state.k += 1;
            return Ok(StepInfo { k: state.k - 1, i: None, eps: false, lambda, delay_max: 0 });
        }
        let delayed = self.delayed_read(state)?;
        let mut evals = std::mem::take(&mut state.evals);
        let draw = state.draw.clone();
        let res = if delayed {
            evals.compute(&self.family, &self.graph, &draw, &state.read)
        } else {
            evals.compute(&self.family, &self.graph, &draw, &state.x)
        };
        let out = res.and_then(|_| self.apply(state, &draw, &evals, lambda));
        state.evals = evals;
        out
    }

    /// Applies the primal and dual updates for `draw` given operator values at the read point.
    ///
    /// `state.delays` must hold the primal delays used for the read.
    pub fn apply(&self, state: &mut SmartState, draw: &Draw, evals: &Evaluations, lambda: f64) -> Result<StepInfo> {
        let fam = &self.family;
        let layout = fam.layout().clone();
        let (n, m) = (fam.n() as f64, layout.m() as f64);
        let k = state.k;
        let i = draw.i;
        let si = evals.get(i).ok_or_else(|| Error::Numerical("missing operator value".into()))?;
        let uniform_e = self.schedule.dual_uniform_in_i();
        let total = layout.total();
        let mut max_e = 0;
        for &j in &draw.blocks {
            let r = layout.range(j);
            let c = lambda / (self.law.q()[j] * m);
            let a = 1.0 / (n * self.law.p()[i][j]);
            let slot = i * layout.m() + j;
            let (y_i, sum): (Vec<f64>, Vec<f64>);
            let (y_ref, sum_ref): (&[f64], &[f64]) = if uniform_e {
                let e = self.schedule.dual_delay(k, i, j)?;
                max_e = max_e.max(e);
                let t = k as i64 - e as i64;
                let yi = state.dual_hist.read(slot, &state.duals.y[i * total + r.start..i * total + r.end], t)?;
                let sm = state.sum_hist.read(j, &state.duals.sum[r.clone()], t)?;
                (yi, sm)
            } else {
                let mut acc = vec![0.0; r.len()];
                let mut own = vec![0.0; r.len()];
                for l in 0..fam.n() {
                    let e = self.schedule.dual_delay(k, l, j)?;
                    max_e = max_e.max(e);
                    let s = l * layout.m() + j;
                    let v = state.dual_hist.read(
                        s,
                        &state.duals.y[l * total + r.start..l * total + r.end],
                        k as i64 - e as i64,
                    )?;
                    for (a, b) in acc.iter_mut().zip(v) {
                        *a += b;
                    }
                    if l == i {
                        own.copy_from_slice(v);
                    }
                }
                y_i = own;
                sum = acc;
                (&y_i, &sum)
            };
            if max_e > self.schedule.tau_d() {
                return Err(Error::Delay(format!("dual delay {max_e} exceeds tau_d")));
            }
            let xj = &state.x.as_slice()[r.clone()];
            let new: Vec<f64> = xj
                .iter()
                .zip(&si[r.clone()])
                .zip(y_ref.iter().zip(sum_ref))
                .map(|((x, s), (y, sm))| x - c * (a * s - a * y + sm / n))
                .collect();
            if let Some(bad) = new.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("iterate became non-finite at k = {k}, block {j}[{bad}]")));
            }
            state.primal_hist.record_change(j, k, xj);
            state.x.block_mut(j).copy_from_slice(&new);
        }
        if draw.eps {
            for &t in self.graph.triggers(i) {
                let Some(v) = evals.get(t) else { continue };
                for &j in &draw.blocks {
                    if !fam.star()[t][j] {
                        continue;
                    }
                    let r = layout.range(j);
                    let off = t * total;
                    let slot = t * layout.m() + j;
                    state.dual_hist.record_change(slot, k, &state.duals.y[off + r.start..off + r.end]);
                    state.sum_hist.record_change(j, k, &state.duals.sum[r.clone()]);
                    for p in r.clone() {
                        let old = state.duals.y[off + p];
                        state.duals.y[off + p] = v[p];
                        state.duals.sum[p] += v[p] - old;
                    }
                    state.duals.since_refresh += 1;
                }
            }
            if state.duals.since_refresh >= SUM_REFRESH_PERIOD {
                for j in 0..layout.m() {
                    state.sum_hist.record_change(j, k, &state.duals.sum[layout.range(j)]);
                }
                state.duals.refresh();
            }
        }
        let dmax = state.delays.iter().copied().max().unwrap_or(0);
        let dmin = state.delays.iter().copied().min().unwrap_or(0);
        state.max_primal_delay = state.max_primal_delay.max(dmax);
        state.max_dual_delay = state.max_dual_delay.max(max_e);
        state.inconsistency = state.inconsistency.max(dmax - dmin);
        state.k += 1;
        Ok(StepInfo { k, i: Some(i), eps: draw.eps, lambda, delay_max: dmax.max(max_e) })
    }

    /// `|| S(x) ||` in the family metric.
    pub fn residual(&self, x: &BlockVector) -> Result<f64> {
        self.family.metric().norm(&self.family.aggregate(x)?)
    }

    pub fn run(&self, state: &mut SmartState, opts: &RunOptions) -> Result<RunOutput> {
        let mut trace = Vec::new();
        let mut replay = opts.record_replay.then(|| {
            ReplayLog::new(ReplayHeader {
                tau_p: self.schedule.tau_p(),
                tau_d: self.schedule.tau_d(),
                mode: "engine".into(),
                m: self.family.m(),
            })
        });
        if replay.is_some() && !self.schedule.dual_uniform_in_i() {
            return Err(Error::Config("replay logs store one dual delay per block".into()));
        }
        let row = |state: &SmartState, info: Option<StepInfo>| -> Result<TraceRow> {
            Ok(TraceRow {
                iter: state.k,
                residual: self.residual(&state.x)?,
                dist_sq: match (&opts.track_dist, self.family.solution()) {
                    (true, Some(s)) => {
                        let p = s.project(&state.x)?;
                        Some(self.family.metric().norm_sq(&state.x.sub(&p)?)?)
                    }
                    _ => None,
                },
                lambda: info.map_or(self.steps.at(state.k), |s| s.lambda),
                i_k: info.and_then(|s| s.i),
                eps_k: info.is_some_and(|s| s.eps),
                delay_max: info.map_or(0, |s| s.delay_max),
            })
        };
        trace.push(row(state, None)?);
        let stride = opts.stride.max(1);
        let mut stopped = StopReason::MaxIterations;
        let start = state.k;
        while state.k - start < opts.stop.max_iters {
            let info = self.step(state)?;
            if let Some(log) = replay.as_mut() {
                log.records.push(ReplayRecord {
                    k: info.k,
                    i: state.draw.i as u32,
                    eps: state.draw.eps,
                    blocks: state.draw.blocks.iter().map(|&b| b as u32).collect(),
                    d: if info.i.is_some() {
                        state.delays.iter().map(|&d| d as u8).collect()
                    } else {
                        vec![0; self.family.m()]
                    },
                    e: (0..self.family.m())
                        .map(|j| self.schedule.dual_delay(info.k, 0, j).map(|e| e as u8))
                        .collect::<Result<_>>()?,
                });
            }
            let done = state.k - start;
            let at_stride = done.is_multiple_of(stride);
            let check = opts.stop.residual_tol.is_some() && done.is_multiple_of(opts.stop.check_every.max(1));
            if at_stride || check || done == opts.stop.max_iters {
                let r = row(state, Some(info))?;
                let hit = opts.stop.residual_tol.is_some_and(|tol| r.residual <= tol);
                if at_stride || hit || done == opts.stop.max_iters {
                    trace.push(r);
                }
                if hit {
                    stopped = StopReason::Residual;
                    break;
                }
            }
        }
        Ok(RunOutput { trace, replay, stopped })
    }
}

/// Stopping rule: iteration budget and optional residual threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_iters: u64,
    pub residual_tol: Option<f64>,
    /// Residual evaluation period when a threshold is set.
    pub check_every: u64,
}

impl StopRule {
    pub fn iterations(max_iters: u64) -> Self {
        Self { max_iters, residual_tol: None, check_every: 1 }
    }

    pub fn residual(max_iters: u64, tol: f64, check_every: u64) -> Self {
        Self { max_iters, residual_tol: Some(tol), check_every }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub stop: StopRule,
    pub stride: u64,
    pub record_replay: bool,
    pub track_dist: bool,
}

impl RunOptions {
    pub fn new(stop: StopRule) -> Self {
        Self { stop, stride: 1, record_replay: false, track_dist: true }
    }

    pub fn stride(mut self, stride: u64) -> Self {
        self.stride = stride;
        self
    }

    pub fn record(mut self) -> Self {
        self.record_replay = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIterations,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: u64,
    pub residual: f64,
    pub dist_sq: Option<f64>,
    pub lambda: f64,
    pub i_k: Option<usize>,
    pub eps_k: bool,
    pub delay_max: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRow>,
    pub replay: Option<ReplayLog>,
    pub stopped: StopReason,
}

/// Writes the trace as CSV with columns `iter,residual,dist_sq,lambda,i_k,eps_k,delay_max`.
pub fn write_trace_csv(trace: &[TraceRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "residual", "dist_sq", "lambda", "i_k", "eps_k", "delay_max"])?;
    for r in trace {
        w.write_record([
            r.iter.to_string(),
            format!("{:e}", r.residual),
            r.dist_sq.map(|d| format!("{d:e}")).unwrap_or_default(),
            format!("{:e}", r.lambda),
            r.i_k.map(|i| i.to_string()).unwrap_or_default(),
            u8::from(r.eps_k).to_string(),
            r.delay_max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
