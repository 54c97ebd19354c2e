//! Operator-splitting instances on product spaces and non-standard metrics.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{matvec, matvec_t_add, single_layout, spectral_norm, PresetBundle, Transport};
use crate::blockspace::{BlockLayout, BlockVector, EquivalenceConstants, GramMetric, Metric};
use crate::engine::DualInit;
use crate::error::{check_finite, Error, Result};
use crate::operators::{
    resolvent_op, AffineMap, FnOperator, LipschitzMap, MonotoneOp, Operator, OperatorFamily, ProxFn, SmoothFn,
};
use crate::rng::{stream, Stream};
use crate::sampling::{BlockMode, Draw, SamplingLaw, TriggerGraph};
use crate::schedule::{DelayMode, DelaySchedule};

type VecMap = dyn Fn(&[f64], &mut [f64]) -> Result<()> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LinSagaVariant {
    /// Star trigger graph into the last operator, dual refresh every iteration.
    Saga,
    /// Complete trigger graph refreshed with probability `1/tau`.
    Svrg { tau: usize },
}

/// Smoothness data of the prox term, when it has any.
#[derive(Debug, Clone, Copy)]
struct ProxSmoothness {
    lipschitz: f64,
    mu: f64,
}

fn prox_smoothness(g: &ProxFn) -> ProxSmoothness {
    match g {
        ProxFn::Zero => ProxSmoothness { lipschitz: 0.0, mu: 0.0 },
        ProxFn::SqL2 { weight } | ProxFn::SqDist { weight, .. } => ProxSmoothness { lipschitz: *weight, mu: *weight },
        other => ProxSmoothness { lipschitz: f64::INFINITY, mu: other.strong_convexity() },
    }
}

/// Gradient of a prox term, when it is differentiable.
fn prox_gradient(g: &ProxFn, x: &[f64]) -> Option<Vec<f64>> {
    match g {
        ProxFn::Zero => Some(vec![0.0; x.len()]),
        ProxFn::SqL2 { weight } => Some(x.iter().map(|v| weight * v).collect()),
        ProxFn::SqDist { weight, center } => Some(x.iter().zip(center).map(|(v, c)| weight * (v - c)).collect()),
        _ => None,
    }
}

/// The pieces of the projected splitting shared by the linear-constraint and duplicated-space instances.
struct LinSplit {
    n: usize,
    gamma: f64,
    fs: Vec<Arc<dyn SmoothFn>>,
    lhat: Vec<f64>,
    shift: Arc<Vec<f64>>,
    proj: Arc<VecMap>,
    prox: Arc<VecMap>,
    smooth_g: ProxSmoothness,
    mu_f: f64,
}

impl LinSplit {
    /// `prox_{gamma g}(u + c) - c`
    fn shifted_prox(prox: &VecMap, shift: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        let v: Vec<f64> = u.iter().zip(shift).map(|(a, c)| a + c).collect();
        prox(&v, out)?;
        out.iter_mut().zip(shift).for_each(|(o, c)| *o -= c);
        Ok(())
    }

    fn family(&self) -> Result<OperatorFamily> {
        let d = self.shift.len();
        let (n, gamma) = (self.n, self.gamma);
        let big_n = n as f64;
        let mut ops: Vec<Arc<dyn Operator>> = Vec::with_capacity(n + 1);
        for f in &self.fs {
            let (f, shift, proj, prox) = (f.clone(), self.shift.clone(), self.proj.clone(), self.prox.clone());
            ops.push(Arc::new(FnOperator::new("projected-gradient", 1, move |x, out| {
                let mut z = vec![0.0; d];
                Self::shifted_prox(prox.as_ref(), &shift, x.as_slice(), &mut z)?;
                let mut pz = vec![0.0; d];
                proj(&z, &mut pz)?;
                pz.iter_mut().zip(shift.iter()).for_each(|(a, c)| *a += c);
                let mut g = vec![0.0; d];
                f.grad(&pz, &mut g);
                proj(&g, out)?;
                out.iter_mut().for_each(|o| *o *= gamma / big_n);
                check_finite("projected gradient", out)
            })));
        }
        let (shift, proj, prox) = (self.shift.clone(), self.proj.clone(), self.prox.clone());
        ops.push(Arc::new(FnOperator::new("reflected-prox", 1, move |x, out| {
            let mut z = vec![0.0; d];
            Self::shifted_prox(prox.as_ref(), &shift, x.as_slice(), &mut z)?;
            let (mut pz, mut px) = (vec![0.0; d], vec![0.0; d]);
            proj(&z, &mut pz)?;
            proj(x.as_slice(), &mut px)?;
            for (o, ((zv, pzv), pxv)) in out.iter_mut().zip(z.iter().zip(&pz).zip(&px)) {
                *o = zv - 2.0 * pzv + pxv;
            }
            check_finite("reflected prox", out)
        })));
        let lsum: f64 = self.lhat.iter().sum();
        let mut beta: Vec<Vec<f64>> =
            self.lhat.iter().map(|l| vec![big_n / (2.0 * gamma * l * (big_n + 1.0))]).collect();
        beta.push(vec![(1.0 - gamma * lsum / (2.0 * big_n)) / (big_n + 1.0)]);
        let mut family = OperatorFamily::new(single_layout(d)?, ops, beta, vec![vec![true]; n + 1], Metric::Product)?;
        let l = lsum / big_n;
        let ProxSmoothness { lipschitz: lg, mu: mu_g } = self.smooth_g;
        if lg.is_finite() && gamma <= 2.0 / l {
            let first = if lg == 0.0 { 0.0 } else { 1.0 / (1.0 + 1.0 / (gamma * lg)) };
            let second = (1.0 - 2.0 * gamma * self.mu_f + gamma * gamma * l * self.mu_f).max(0.0).sqrt() / (1.0 + gamma * mu_g);
            let mu = (1.0 - (first + second)) / (big_n + 1.0);
            if mu > 0.0 {
                family = family.with_mu(mu)?;
            }
        }
        Ok(family)
    }

    fn law(&self, variant: LinSagaVariant) -> Result<(SamplingLaw, TriggerGraph)> {
        let lsum: f64 = self.lhat.iter().sum();
        let mut p: Vec<Vec<f64>> = self.lhat.iter().map(|l| vec![l / (2.0 * lsum)]).collect();
        p.push(vec![0.5]);
        match variant {
            LinSagaVariant::Saga => Ok((
                SamplingLaw::new(vec![1.0], p, 1.0, BlockMode::IndependentBernoulli)?,
                TriggerGraph::star_into_last(self.n + 1)?,
            )),
            LinSagaVariant::Svrg { tau } if tau >= 1 => Ok((
                SamplingLaw::new(vec![1.0], p, 1.0 / tau as f64, BlockMode::IndependentBernoulli)?,
                TriggerGraph::complete(self.n + 1)?,
            )),
            LinSagaVariant::Svrg { .. } => Err(Error::Config("SVRG variant needs tau >= 1".into())),
        }
    }
}

fn check_lipschitz(fs: &[Arc<dyn SmoothFn>], d: usize) -> Result<Vec<f64>> {
    if fs.is_empty() {
        return Err(Error::Config("need at least one smooth function".into()));
    }
    fs.iter()
        .enumerate()
        .map(|(i, f)| {
            if f.dim() != d {
                return Err(Error::Dimension(format!("function {i} has dimension {}, expected {d}", f.dim())));
            }
            let l = f.lipschitz();
            if l > 0.0 && l.is_finite() {
                Ok(l)
            } else {
                Err(Error::Config(format!("function {i} has Lipschitz constant {l}")))
            }
        })
        .collect()
}

/// Projected proximal SAGA/SVRG for `min (1/N) sum f_i(x) + g(x)` subject to `A x = b`.
///
/// `lhat` defaults to the Lipschitz constants of the `f_i`.
pub fn lin_saga(
    fs: Vec<Arc<dyn SmoothFn>>,
    g: ProxFn,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lhat: Option<Vec<f64>>,
    variant: LinSagaVariant,
) -> Result<PresetBundle> {
    let d = a.ncols();
    if a.nrows() != b.len() {
        return Err(Error::Dimension("constraint matrix and right-hand side".into()));
    }
    g.validate()?;
    if g.dim().is_some_and(|gd| gd != d) {
        return Err(Error::Dimension("prox term dimension".into()));
    }
    let lips = check_lipschitz(&fs, d)?;
    let lhat = lhat.unwrap_or(lips);
    if lhat.len() != fs.len() || lhat.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::Config("lhat must hold one positive constant per function".into()));
    }
    let (pinv, c) = if a.nrows() == 0 {
        (DMatrix::zeros(d, 0), DVector::zeros(d))
    } else {
        let pinv = a.clone().pseudo_inverse(1e-12).map_err(|e| Error::Numerical(e.to_string()))?;
        let c = &pinv * b;
        if (a * &c - b).norm() > 1e-9 * (1.0 + b.norm()) {
            return Err(Error::Degenerate("A x = b has no solution".into()));
        }
        (pinv, c)
    };
    let pv = DMatrix::identity(d, d) - &pinv * a;
    let proj: Arc<VecMap> = Arc::new(move |x, out| {
        matvec(&pv, x, out);
        Ok(())
    });
    let gamma_g = fs.len() as f64 / lhat.iter().sum::<f64>();
    let gp = g.clone();
    let prox: Arc<VecMap> = Arc::new(move |x, out| gp.prox(gamma_g, x, out));
    let n = fs.len();
    let split = LinSplit {
        n,
        gamma: gamma_g,
        mu_f: fs.iter().map(|f| f.strong_convexity()).sum::<f64>() / n as f64,
        fs,
        lhat,
        shift: Arc::new(c.iter().copied().collect()),
        proj,
        prox: prox.clone(),
        smooth_g: prox_smoothness(&g),
    };
    let family = split.family()?;
    let (law, graph) = split.law(variant)?;
    let shift = split.shift.clone();
    let transport = Transport::new("prox-unshift", move |x| {
        let v: Vec<f64> = x.as_slice().iter().zip(shift.iter()).map(|(a, c)| a + c).collect();
        let mut out = vec![0.0; v.len()];
        prox(&v, &mut out)?;
        Ok(out)
    });
    let shift = split.shift.clone();
    let embed = prox_gradient(&g, &vec![0.0; d]).map(|_| {
        Transport::new("gradient-lift", move |w| {
            let gr = prox_gradient(&g, w.as_slice()).expect("differentiable prox term");
            Ok(w.as_slice().iter().zip(gr.iter().zip(shift.iter())).map(|(v, (gv, c))| v - c + gamma_g * gv).collect())
        })
    });
    let name = match variant {
        LinSagaVariant::Saga => "lin-saga",
        LinSagaVariant::Svrg { .. } => "lin-svrg",
    };
    let bundle = PresetBundle::assemble(
        name,
        "projected SAGA: S_i = (gamma/N) P_V grad f_i P_V prox_{gamma g}, S_{N+1} = (I - 2 P_V) prox_{gamma g} + P_V",
        family,
        law,
        graph,
        DelaySchedule::zero(),
        DualInit::AtStart,
        transport,
    )?;
    Ok(match embed {
        Some(e) => bundle.with_embed(e),
        None => bundle,
    })
}

/// `x -> f(mean of the M copies)` on the duplicated space.
#[derive(Debug)]
struct CopyMean {
    f: Arc<dyn SmoothFn>,
    copies: usize,
}

impl CopyMean {
    fn mean(&self, x: &[f64]) -> Vec<f64> {
        let d = self.f.dim();
        let mut w = vec![0.0; d];
        x.chunks(d).for_each(|c| w.iter_mut().zip(c).for_each(|(a, v)| *a += v / self.copies as f64));
        w
    }
}

impl SmoothFn for CopyMean {
    fn dim(&self) -> usize {
        self.f.dim() * self.copies
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.f.value(&self.mean(x))
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let d = self.f.dim();
        let mut g = vec![0.0; d];
        self.f.grad(&self.mean(x), &mut g);
        for c in out.chunks_mut(d) {
            c.iter_mut().zip(&g).for_each(|(o, v)| *o = v / self.copies as f64);
        }
    }

    fn lipschitz(&self) -> f64 {
        self.f.lipschitz() / self.copies as f64
    }

    fn strong_convexity(&self) -> f64 {
        0.0
    }

    fn block_lipschitz(&self, layout: &BlockLayout) -> Vec<f64> {
        vec![self.lipschitz(); layout.m()]
    }
}

fn copy_mean(x: &[f64], d: usize, copies: usize) -> Vec<f64> {
    let mut w = vec![0.0; d];
    x.chunks(d).for_each(|c| w.iter_mut().zip(c).for_each(|(a, v)| *a += v / copies as f64));
    w
}

fn separable_prox(gs: &[ProxFn], gamma: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
    let d = x.len() / gs.len();
    for ((g, xc), oc) in gs.iter().zip(x.chunks(d)).zip(out.chunks_mut(d)) {
        g.prox(gamma, xc, oc)?;
    }
    Ok(())
}

fn super_inputs(fs: &[Arc<dyn SmoothFn>], gs: &[ProxFn]) -> Result<(usize, Vec<f64>, f64)> {
    let d = fs.first().ok_or_else(|| Error::Config("need at least one smooth function".into()))?.dim();
    if gs.is_empty() {
        return Err(Error::Config("need at least one prox term".into()));
    }
    for g in gs {
        g.validate()?;
        if g.dim().is_some_and(|gd| gd != d) {
            return Err(Error::Dimension("prox term dimension".into()));
        }
    }
    let lips = check_lipschitz(fs, d)?;
    let gamma = (gs.len() * fs.len()) as f64 / lips.iter().sum::<f64>();
    Ok((d, lips, gamma))
}

/// Projected SAGA/SVRG for `min sum_j g_j(z) + (1/N) sum f_i(z)` on `M` copies of `z` held equal.
pub fn super_saga(fs: Vec<Arc<dyn SmoothFn>>, gs: Vec<ProxFn>, variant: LinSagaVariant) -> Result<PresetBundle> {
    let (d, lips, gamma) = super_inputs(&fs, &gs)?;
    let copies = gs.len();
    let total = d * copies;
    let proj: Arc<VecMap> = Arc::new(move |x, out| {
        let w = copy_mean(x, d, copies);
        out.chunks_mut(d).for_each(|c| c.copy_from_slice(&w));
        Ok(())
    });
    let gp = gs.clone();
    let prox: Arc<VecMap> = Arc::new(move |x, out| separable_prox(&gp, gamma, x, out));
    let smooth: Vec<ProxSmoothness> = gs.iter().map(prox_smoothness).collect();
    let n = fs.len();
    let split = LinSplit {
        n,
        gamma,
        mu_f: 0.0,
        lhat: lips.iter().map(|l| l / copies as f64).collect(),
        fs: fs.iter().map(|f| Arc::new(CopyMean { f: f.clone(), copies }) as Arc<dyn SmoothFn>).collect(),
        shift: Arc::new(vec![0.0; total]),
        proj,
        prox,
        smooth_g: ProxSmoothness {
            lipschitz: smooth.iter().map(|s| s.lipschitz).fold(0.0, f64::max),
            mu: smooth.iter().map(|s| s.mu).fold(f64::INFINITY, f64::min),
        },
    };
    let family = split.family()?;
    let (law, graph) = split.law(variant)?;
    let gt = gs.clone();
    let transport = Transport::new("prox-mean", move |x| {
        let mut w = vec![0.0; total];
        separable_prox(&gt, gamma, x.as_slice(), &mut w)?;
        Ok(copy_mean(&w, d, copies))
    });
    let probe = vec![0.0; d];
    let differentiable = gs.iter().all(|g| prox_gradient(g, &probe).is_some());
    let name = match variant {
        LinSagaVariant::Saga => "super-saga",
        LinSagaVariant::Svrg { .. } => "super-svrg",
    };
    let bundle = PresetBundle::assemble(
        name,
        "duplicated-space projected SAGA: copies x_1..x_M held equal, g = sum_j g_j(x_j), f_i applied to the copy mean",
        family,
        law,
        graph,
        DelaySchedule::zero(),
        DualInit::AtStart,
        transport,
    )?;
    if !differentiable {
        return Ok(bundle);
    }
    let embed = Transport::new("copy-gradient-lift", move |w| {
        let mut x = Vec::with_capacity(total);
        for g in &gs {
            let gr = prox_gradient(g, w.as_slice()).expect("differentiable prox term");
            x.extend(w.as_slice().iter().zip(&gr).map(|(v, gv)| v + gamma * gv));
        }
        Ok(x)
    });
    Ok(bundle.with_embed(embed))
}

/// Final state of a compressed-dual run.
#[derive(Debug, Clone)]
pub struct CompressedRun {
    pub x: Vec<f64>,
    pub solution: Vec<f64>,
    pub iterations: u64,
}

/// The duplicated-space method with duals stored only along the diagonal, one vector per operator.
///
/// Runs its own loop over the same sampling law as [`super_saga`]. Only full-vector,
/// consistent-read schedules without dual delays are accepted.
#[derive(Debug, Clone)]
pub struct SuperSagaCompressed {
    fs: Vec<Arc<dyn SmoothFn>>,
    gs: Vec<ProxFn>,
    d: usize,
    gamma: f64,
    law: SamplingLaw,
    graph: TriggerGraph,
    schedule: DelaySchedule,
    lambda: f64,
}

impl SuperSagaCompressed {
    pub fn new(
        fs: Vec<Arc<dyn SmoothFn>>,
        gs: Vec<ProxFn>,
        variant: LinSagaVariant,
        schedule: DelaySchedule,
        lambda: f64,
    ) -> Result<Self> {
        if schedule.tau_d() > 0 {
            return Err(Error::Config("compressed duals require dual delay 0".into()));
        }
        let mode = schedule.primal_mode();
        let consistent = matches!(mode, DelayMode::Zero | DelayMode::ConstantMax | DelayMode::Cyclic);
        if !consistent && schedule.tau_p() > 0 {
            return Err(Error::Config(format!("compressed duals require consistent reads, got {mode:?}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("step size {lambda}")));
        }
        let bundle = super_saga(fs.clone(), gs.clone(), variant)?;
        let (d, _, gamma) = super_inputs(&fs, &gs)?;
        Ok(Self { fs, gs, d, gamma, law: bundle.law, graph: bundle.graph, schedule, lambda })
    }

    /// Sampling law over the `N + 1` operators.
    pub fn law(&self) -> &SamplingLaw {
        &self.law
    }

    /// Diagonal component of `S_i(x)` and, for the last operator, its off-diagonal part.
    fn eval(&self, i: usize, x: &[f64], diag: &mut [f64], off: &mut Vec<f64>) -> Result<()> {
        let (d, copies) = (self.d, self.gs.len());
        let mut w = vec![0.0; x.len()];
        separable_prox(&self.gs, self.gamma, x, &mut w)?;
        let wbar = copy_mean(&w, d, copies);
        off.clear();
        if i < self.fs.len() {
            self.fs[i].grad(&wbar, diag);
            let s = self.gamma / (self.fs.len() * copies) as f64;
            diag.iter_mut().for_each(|v| *v *= s);
        } else {
            let xbar = copy_mean(x, d, copies);
            diag.iter_mut().zip(xbar.iter().zip(&wbar)).for_each(|(o, (a, b))| *o = a - b);
            off.extend(w.chunks(d).flat_map(|c| c.iter().zip(&wbar).map(|(a, b)| a - b)));
        }
        check_finite("compressed operator", diag)
    }

    /// Runs `iters` iterations from `x0` (length `M d`) on sampling stream `seed`, duals started at `x0`.
    pub fn run(&self, x0: &[f64], seed: u64, iters: u64) -> Result<CompressedRun> {
        let (d, copies) = (self.d, self.gs.len());
        if x0.len() != d * copies {
            return Err(Error::Dimension(format!("start point has length {}, expected {}", x0.len(), d * copies)));
        }
        let n = self.fs.len() + 1;
        let mut off = Vec::new();
        let mut y = vec![vec![0.0; d]; n];
        for (i, yi) in y.iter_mut().enumerate() {
            self.eval(i, x0, yi, &mut off)?;
        }
        let mut sum = vec![0.0; d];
        y.iter().for_each(|yi| sum.iter_mut().zip(yi).for_each(|(a, v)| *a += v));
        let mut x = x0.to_vec();
        let mut hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(self.schedule.tau_p() + 1);
        let mut rng = stream(seed, Stream::Sampling);
        let mut draw = Draw::default();
        let mut delays = Vec::new();
        let (mut s, mut st) = (vec![0.0; d], vec![0.0; d]);
        for k in 0..iters {
            hist.push_front(x.clone());
            hist.truncate(self.schedule.tau_p() + 1);
            self.law.draw_into(&mut rng, &mut draw);
            if draw.blocks.is_empty() {
                continue;
            }
            self.schedule.primal_delays(k, 1, &mut delays)?;
            let delay = delays.first().copied().unwrap_or(0).min(hist.len() - 1);
            let read = hist[delay].clone();
            let i = draw.i;
            self.eval(i, &read, &mut s, &mut off)?;
            let a = 1.0 / (n as f64 * self.law.p()[i][0]);
            for (c, xc) in x.chunks_mut(d).enumerate() {
                for (p, xv) in xc.iter_mut().enumerate() {
                    let perp = off.get(c * d + p).copied().unwrap_or(0.0);
                    *xv -= self.lambda * (a * (s[p] + perp) - a * y[i][p] + sum[p] / n as f64);
                }
            }
            if draw.eps {
                for &t in self.graph.triggers(i) {
                    if t == i {
                        st.copy_from_slice(&s);
                    } else {
                        self.eval(t, &read, &mut st, &mut off)?;
                    }
                    for p in 0..d {
                        sum[p] += st[p] - y[t][p];
                    }
                    y[t].copy_from_slice(&st);
                }
            }
            check_finite("compressed iterate", &x)?;
        }
        let mut w = vec![0.0; x.len()];
        separable_prox(&self.gs, self.gamma, &x, &mut w)?;
        Ok(CompressedRun { solution: copy_mean(&w, d, copies), x, iterations: iters })
    }
}

fn sandwich(gammas: &[f64], delta: f64) -> EquivalenceConstants {
    let r = delta.sqrt();
    EquivalenceConstants {
        lower: gammas.iter().map(|g| (1.0 - r) / g).collect(),
        upper: gammas.iter().map(|g| (1.0 + r) / g).collect(),
    }
}

fn check_gammas(gammas: &[f64], expected: usize, delta: f64) -> Result<()> {
    if gammas.len() != expected {
        return Err(Error::Dimension(format!("expected {expected} step parameters, got {}", gammas.len())));
    }
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(Error::Config(format!("step parameter {g} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta = {delta} must lie in (0, 1)")));
    }
    Ok(())
}

/// Inputs of the coupled monotropic program `min sum g_j(x_j) + f(x_1..x_M)` s.t. `sum A_j x_j = b`.
#[derive(Debug, Clone)]
pub struct TropicParts {
    pub gs: Vec<ProxFn>,
    /// Smooth coupling term on the concatenation `(x_1, ..., x_M)`.
    pub f: Option<Arc<dyn SmoothFn>>,
    pub a: Vec<DMatrix<f64>>,
    pub b: DVector<f64>,
    /// `gamma_1..gamma_M` for the primal blocks, then `gamma_{M+1}` for the multiplier.
    pub gammas: Vec<f64>,
    pub delta: f64,
}

/// Multiplier-coupled block method: `n = 1`, `m = M + 1`, one uniformly sampled block per step.
pub fn tropic(parts: TropicParts) -> Result<PresetBundle> {
    let TropicParts { gs, f, a, b, gammas, delta } = parts;
    let mm = gs.len();
    if mm == 0 || a.len() != mm {
        return Err(Error::Dimension("need one matrix A_j per prox term".into()));
    }
    check_gammas(&gammas, mm + 1, delta)?;
    let rows = b.len();
    let dims: Vec<usize> = a.iter().map(|aj| aj.ncols()).collect();
    if a.iter().any(|aj| aj.nrows() != rows) {
        return Err(Error::Dimension("every A_j needs as many rows as b".into()));
    }
    for (g, &dj) in gs.iter().zip(&dims) {
        g.validate()?;
        if g.dim().is_some_and(|gd| gd != dj) {
            return Err(Error::Dimension("prox term dimension".into()));
        }
    }
    let primal: usize = dims.iter().sum();
    if f.as_ref().is_some_and(|f| f.dim() != primal) {
        return Err(Error::Dimension("smooth term must act on the concatenated primal blocks".into()));
    }
    let coupling = gammas[mm] * a.iter().zip(&gammas).map(|(aj, g)| g * spectral_norm(aj).powi(2)).sum::<f64>();
    if coupling > delta * (1.0 + 1e-12) {
        return Err(Error::Config(format!("gamma_(M+1) sum gamma_j ||A_j||^2 = {coupling} exceeds delta = {delta}")));
    }
    let l = f.as_ref().map_or(0.0, |f| f.lipschitz());
    let gmax = gammas[..mm].iter().copied().fold(0.0, f64::max);
    if l > 0.0 && gmax > 2.0 * (1.0 - delta.sqrt()) / l {
        return Err(Error::Config(format!("max gamma_j = {gmax} exceeds 2 (1 - sqrt(delta)) / L")));
    }
    let mut all_dims = dims.clone();
    all_dims.push(rows);
    let layout = Arc::new(BlockLayout::new(all_dims)?);
    let total = layout.total();
    let mut pm = DMatrix::zeros(total, total);
    for j in 0..=mm {
        for r in layout.range(j) {
            pm[(r, r)] = 1.0 / gammas[j];
        }
    }
    let last = layout.range(mm);
    for (j, aj) in a.iter().enumerate() {
        let rj = layout.range(j);
        pm.view_mut((last.start, rj.start), (rows, rj.len())).copy_from(aj);
        pm.view_mut((rj.start, last.start), (rj.len(), rows)).copy_from(&aj.transpose());
    }
    let metric = Metric::GramP(GramMetric::new(pm)?.with_constants(&layout, sandwich(&gammas, delta))?);
    let lay = layout.clone();
    let (ao, go, fo, bo, gam) = (a.clone(), gs.clone(), f.clone(), b.clone(), gammas.clone());
    let op = FnOperator::new("tropic", mm + 1, move |x, out| {
        let mut resid: Vec<f64> = bo.iter().map(|v| -v).collect();
        for (j, aj) in ao.iter().enumerate() {
            let mut t = vec![0.0; rows];
            matvec(aj, x.block(j), &mut t);
            resid.iter_mut().zip(&t).for_each(|(r, v)| *r += v);
        }
        let grad = fo.as_ref().map(|f| {
            let mut g = vec![0.0; primal];
            f.grad(&x.as_slice()[..primal], &mut g);
            g
        });
        let mult: Vec<f64> =
            x.block(mm).iter().zip(&resid).map(|(u, r)| u + 2.0 * gam[mm] * r).collect();
        for j in 0..mm {
            let r = lay.range(j);
            let mut at = vec![0.0; r.len()];
            matvec_t_add(&ao[j], &mult, &mut at);
            let v: Vec<f64> = x
                .block(j)
                .iter()
                .enumerate()
                .map(|(p, xv)| xv - gam[j] * at[p] - gam[j] * grad.as_ref().map_or(0.0, |g| g[r.start + p]))
                .collect();
            let mut pr = vec![0.0; r.len()];
            go[j].prox(gam[j], &v, &mut pr)?;
            out[r].iter_mut().zip(x.block(j).iter().zip(&pr)).for_each(|(o, (xv, pv))| *o = xv - pv);
        }
        out[lay.range(mm)].iter_mut().zip(&resid).for_each(|(o, r)| *o = -gam[mm] * r);
        check_finite("tropic operator", out)
    });
    let slack = (1.0 - delta.sqrt()) - l * gmax / 4.0;
    if slack <= 0.0 {
        return Err(Error::Config("step parameters leave no coherence margin".into()));
    }
    let beta = vec![gammas.iter().map(|g| slack / g).collect()];
    let family = OperatorFamily::new(layout.clone(), vec![Arc::new(op)], beta, vec![vec![false; mm + 1]], metric)?;
    let m = mm + 1;
    let law = SamplingLaw::new(vec![1.0 / m as f64; m], vec![vec![1.0; m]], 1.0, BlockMode::SingleBlock)?;
    let transport = Transport::new("primal-blocks", move |x| Ok(x.as_slice()[..primal].to_vec()));
    PresetBundle::assemble(
        "tropic",
        "primal-dual block method: x_j <- prox_{gamma_j g_j}(x_j - gamma_j A_j^T (u + 2 gamma_u r) - gamma_j grad_j f), u <- u + gamma_u r",
        family,
        law,
        TriggerGraph::self_loops(1)?,
        DelaySchedule::zero(),
        DualInit::Zero,
        transport,
    )
}

/// Gram metric with `I/gamma_j` on the diagonal and `-A_j` couplings between block 1 and block `j`.
fn primal_dual_metric(layout: &BlockLayout, a: &[DMatrix<f64>], gammas: &[f64], delta: f64) -> Result<Metric> {
    let total = layout.total();
    let mut pm = DMatrix::zeros(total, total);
    for (j, g) in gammas.iter().enumerate() {
        for r in layout.range(j) {
            pm[(r, r)] = 1.0 / g;
        }
    }
    let first = layout.range(0);
    for (k, aj) in a.iter().enumerate() {
        let rj = layout.range(k + 1);
        pm.view_mut((rj.start, first.start), (rj.len(), first.len())).copy_from(&(-aj));
        pm.view_mut((first.start, rj.start), (first.len(), rj.len())).copy_from(&(-aj.transpose()));
    }
    Ok(Metric::GramP(GramMetric::new(pm)?.with_constants(layout, sandwich(gammas, delta))?))
}

fn primal_dual_checks(d: usize, gs: &[ProxFn], a: &[DMatrix<f64>]) -> Result<Vec<usize>> {
    if gs.len() != a.len() {
        return Err(Error::Dimension("need one matrix A_j per dual prox term".into()));
    }
    let mut dims = vec![d];
    for (g, aj) in gs.iter().zip(a) {
        if aj.ncols() != d {
            return Err(Error::Dimension("every A_j must act on the primal block".into()));
        }
        g.validate()?;
        if g.dim().is_some_and(|gd| gd != aj.nrows()) {
            return Err(Error::Dimension("prox term dimension".into()));
        }
        dims.push(aj.nrows());
    }
    Ok(dims)
}

/// `sum_j A_j^T x_j` over the dual blocks `j >= 1` of `x`.
fn adjoint_sum(a: &[DMatrix<f64>], x: &BlockVector, d: usize) -> Vec<f64> {
    let mut s = vec![0.0; d];
    for (k, aj) in a.iter().enumerate() {
        matvec_t_add(aj, x.block(k + 1), &mut s);
    }
    s
}

/// Primal-dual method for `min g_1(z) + sum_{j >= 2} g_j(A_j z)`: `n = 1`, `m = M`.
///
/// `gs[0]` is `g_1`; `gs[j]` pairs with `a[j - 1]`.
pub fn prox_smart(gs: Vec<ProxFn>, a: Vec<DMatrix<f64>>, gammas: Vec<f64>, delta: f64) -> Result<PresetBundle> {
    let mm = gs.len();
    if mm < 2 {
        return Err(Error::Config("need g_1 and at least one composed term".into()));
    }
    check_gammas(&gammas, mm, delta)?;
    let d = a.first().map(|a0| a0.ncols()).unwrap_or(0);
    gs[0].validate()?;
    if gs[0].dim().is_some_and(|gd| gd != d) {
        return Err(Error::Dimension("g_1 dimension".into()));
    }
    let dims = primal_dual_checks(d, &gs[1..], &a)?;
    let coupling = gammas[0] * a.iter().zip(&gammas[1..]).map(|(aj, g)| g * spectral_norm(aj).powi(2)).sum::<f64>();
    if coupling > delta * (1.0 + 1e-12) {
        return Err(Error::Config(format!("gamma_1 sum gamma_j ||A_j||^2 = {coupling} exceeds delta = {delta}")));
    }
    let layout = Arc::new(BlockLayout::new(dims)?);
    let metric = primal_dual_metric(&layout, &a, &gammas, delta)?;
    let conj: Vec<ProxFn> = gs[1..].iter().cloned().map(ProxFn::conjugate).collect();
    let (ao, g1, gam, lay) = (a.clone(), gs[0].clone(), gammas.clone(), layout.clone());
    let op = FnOperator::new("prox-smart", mm, move |x, out| {
        let at = adjoint_sum(&ao, x, d);
        let v: Vec<f64> = x.block(0).iter().zip(&at).map(|(xv, t)| xv - gam[0] * t).collect();
        let mut bar = vec![0.0; d];
        g1.prox(gam[0], &v, &mut bar)?;
        out[lay.range(0)].iter_mut().zip(x.block(0).iter().zip(&bar)).for_each(|(o, (xv, b))| *o = xv - b);
        let refl: Vec<f64> = bar.iter().zip(x.block(0)).map(|(b, xv)| 2.0 * b - xv).collect();
        for (k, (aj, gc)) in ao.iter().zip(&conj).enumerate() {
            let j = k + 1;
            let r = lay.range(j);
            let mut t = vec![0.0; r.len()];
            matvec(aj, &refl, &mut t);
            let v: Vec<f64> = x.block(j).iter().zip(&t).map(|(xv, tv)| xv + gam[j] * tv).collect();
            let mut pr = vec![0.0; r.len()];
            gc.prox(gam[j], &v, &mut pr)?;
            out[r].iter_mut().zip(x.block(j).iter().zip(&pr)).for_each(|(o, (xv, pv))| *o = xv - pv);
        }
        check_finite("prox-smart operator", out)
    });
    let r = delta.sqrt();
    let beta = vec![gammas.iter().map(|g| (1.0 - r) / g).collect()];
    let family = OperatorFamily::new(layout.clone(), vec![Arc::new(op)], beta, vec![vec![false; mm]], metric)?;
    let law = SamplingLaw::new(vec![1.0 / mm as f64; mm], vec![vec![1.0; mm]], 1.0, BlockMode::SingleBlock)?;
    let transport = Transport::new("primal-block", move |x| Ok(x.block(0).to_vec()));
    PresetBundle::assemble(
        "prox-smart",
        "primal-dual prox method: x_1 <- prox_{gamma_1 g_1}(x_1 - gamma_1 sum A_j^T x_j), x_j <- prox_{gamma_j g_j^*}(x_j + gamma_j A_j (2 xbar_1 - x_1))",
        family,
        law,
        TriggerGraph::self_loops(1)?,
        DelaySchedule::zero(),
        DualInit::Zero,
        transport,
    )
}

/// Primal-dual SAGA for `min (1/N) sum f_i(z) + sum_{j >= 2} g_j(A_j z)`: `n = N + 1`, `m = M`.
///
/// `gs[k]` pairs with `a[k]` and is block `k + 2` in one-based numbering; `gammas` has `M` entries.
pub fn prox_smart_plus(
    fs: Vec<Arc<dyn SmoothFn>>,
    gs: Vec<ProxFn>,
    a: Vec<DMatrix<f64>>,
    gammas: Vec<f64>,
    delta: f64,
) -> Result<PresetBundle> {
    let mm = gs.len() + 1;
    if mm < 2 {
        return Err(Error::Config("need at least one composed term".into()));
    }
    check_gammas(&gammas, mm, delta)?;
    let d = a.first().map(|a0| a0.ncols()).unwrap_or(0);
    let dims = primal_dual_checks(d, &gs, &a)?;
    let lips = check_lipschitz(&fs, d)?;
    let nf = fs.len();
    let big_n = nf as f64;
    let lsum: f64 = lips.iter().sum();
    let g1 = gammas[0];
    let coupling = g1 * (a.iter().zip(&gammas[1..]).map(|(aj, g)| g * spectral_norm(aj).powi(2)).sum::<f64>() + lsum / (2.0 * big_n));
    if coupling > delta * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "gamma_1 (sum gamma_j ||A_j||^2 + sum L_i / (2N)) = {coupling} exceeds delta = {delta}"
        )));
    }
    let layout = Arc::new(BlockLayout::new(dims)?);
    let metric = primal_dual_metric(&layout, &a, &gammas, delta)?;
    let mut zero = vec![true; mm];
    zero[0] = false;
    let mut ops: Vec<Arc<dyn Operator>> = Vec::with_capacity(nf + 1);
    for f in &fs {
        let (f, ao, lay) = (f.clone(), a.clone(), layout.clone());
        let op = FnOperator::new("composite-gradient", mm, move |x, out| {
            let at = adjoint_sum(&ao, x, d);
            let hat: Vec<f64> = x.block(0).iter().zip(&at).map(|(xv, t)| xv - 2.0 * g1 * t).collect();
            out.iter_mut().for_each(|o| *o = 0.0);
            let r = lay.range(0);
            f.grad(&hat, &mut out[r.clone()]);
            out[r].iter_mut().for_each(|o| *o *= g1 / big_n);
            check_finite("composite gradient", out)
        })
        .with_zero_blocks(zero.clone());
        ops.push(Arc::new(op));
    }
    let conj: Vec<ProxFn> = gs.iter().cloned().map(ProxFn::conjugate).collect();
    let (ao, gam, lay) = (a.clone(), gammas.clone(), layout.clone());
    ops.push(Arc::new(FnOperator::new("composite-dual", mm, move |x, out| {
        let at = adjoint_sum(&ao, x, d);
        let hat: Vec<f64> = x.block(0).iter().zip(&at).map(|(xv, t)| xv - 2.0 * g1 * t).collect();
        out[lay.range(0)].iter_mut().zip(&at).for_each(|(o, t)| *o = g1 * t);
        for (k, (aj, gc)) in ao.iter().zip(&conj).enumerate() {
            let j = k + 1;
            let r = lay.range(j);
            let mut t = vec![0.0; r.len()];
            matvec(aj, &hat, &mut t);
            let v: Vec<f64> = x.block(j).iter().zip(&t).map(|(xv, tv)| xv + gam[j] * tv).collect();
            let mut pr = vec![0.0; r.len()];
            gc.prox(gam[j], &v, &mut pr)?;
            out[r].iter_mut().zip(x.block(j).iter().zip(&pr)).for_each(|(o, (xv, pv))| *o = xv - pv);
        }
        check_finite("composite dual operator", out)
    })));
    let r = delta.sqrt();
    let mut beta: Vec<Vec<f64>> = lips
        .iter()
        .map(|l| {
            let mut row = vec![0.0; mm];
            row[0] = big_n * (1.0 - r) / (2.0 * (big_n + 1.0) * g1 * g1 * l);
            row
        })
        .collect();
    beta.push(gammas.iter().map(|g| (1.0 - r) / ((big_n + 1.0) * g)).collect());
    let mut star_row = vec![false; mm];
    star_row[0] = true;
    let family = OperatorFamily::new(layout.clone(), ops, beta, vec![star_row; nf + 1], metric)?;
    let scale = g1 * lsum / big_n;
    let q1 = 1.0 / ((mm - 1) as f64 / scale + 1.0);
    let mut q = vec![(1.0 - q1) / (mm - 1) as f64; mm];
    q[0] = q1;
    let mut p: Vec<Vec<f64>> = lips
        .iter()
        .map(|l| {
            let mut row = vec![0.0; mm];
            row[0] = g1 * l / (big_n * (scale + 1.0));
            row
        })
        .collect();
    let rest = 1.0 - p.iter().map(|row| row[0]).sum::<f64>();
    let mut last = vec![1.0; mm];
    last[0] = rest;
    p.push(last);
    let law = SamplingLaw::new(q, p, 1.0, BlockMode::SingleBlock)?;
    let ao = a.clone();
    let transport = Transport::new("recovered-primal", move |x| {
        let at = adjoint_sum(&ao, x, d);
        Ok(x.block(0).iter().zip(&at).map(|(xv, t)| xv - 2.0 * g1 * t).collect())
    });
    PresetBundle::assemble(
        "prox-smart-plus",
        "primal-dual SAGA: S_i = (gamma_1/N) grad f_i(x_1 - 2 gamma_1 sum A_j^T x_j) on block 1, S_{N+1} carries the dual prox steps",
        family,
        law,
        TriggerGraph::star_into_last(nf + 1)?,
        DelaySchedule::zero(),
        DualInit::AtStart,
        transport,
    )
}

/// Resolvent splitting for `0 in A x + (1/N) sum B_i x` with `A` strongly monotone.
pub fn mono(a: MonotoneOp, bs: Vec<Arc<dyn LipschitzMap>>, gamma: f64) -> Result<PresetBundle> {
    let nb = bs.len();
    let d = bs.first().ok_or_else(|| Error::Config("need at least one Lipschitz operator".into()))?.dim();
    if bs.iter().any(|b| b.dim() != d) {
        return Err(Error::Dimension("Lipschitz operators must share one dimension".into()));
    }
    let lips: Vec<f64> = bs.iter().map(|b| b.lipschitz()).collect();
    if lips.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::Config("Lipschitz constants must be positive".into()));
    }
    let big_n = nb as f64;
    let lbar = lips.iter().sum::<f64>() / big_n;
    let mu_a = a.strong_monotonicity();
    let kappa = (1.0 + gamma * gamma * lbar * lbar).sqrt() / (1.0 + gamma * mu_a);
    let mu = (1.0 - kappa) / (big_n + 1.0);
    if !(mu > 0.0) {
        return Err(Error::Config(format!(
            "gamma = {gamma} gives no contraction (mu_A = {mu_a}, mean Lipschitz = {lbar})"
        )));
    }
    let res = Arc::new(resolvent_op(&a, gamma)?);
    let probe = vec![0.0; d];
    res.apply(&probe, &mut vec![0.0; d])?;
    let mut ops: Vec<Arc<dyn Operator>> = Vec::with_capacity(nb + 1);
    for b in &bs {
        let (b, res) = (b.clone(), res.clone());
        ops.push(Arc::new(FnOperator::new("forward", 1, move |x, out| {
            let mut j = vec![0.0; d];
            res.apply(x.as_slice(), &mut j)?;
            b.apply(&j, out);
            out.iter_mut().for_each(|o| *o *= gamma / big_n);
            check_finite("forward operator", out)
        })));
    }
    let rj = res.clone();
    ops.push(Arc::new(FnOperator::new("backward", 1, move |x, out| {
        rj.apply(x.as_slice(), out)?;
        out.iter_mut().zip(x.as_slice()).for_each(|(o, xv)| *o = xv - *o);
        check_finite("backward operator", out)
    })));
    let mut beta: Vec<Vec<f64>> =
        lips.iter().map(|l| vec![mu * big_n * big_n / (l * l * gamma * gamma * (big_n + 1.0))]).collect();
    beta.push(vec![mu / (big_n + 1.0)]);
    let weights: Vec<f64> = beta.iter().map(|b| 1.0 / b[0]).collect();
    let family = OperatorFamily::new(single_layout(d)?, ops, beta, vec![vec![true]; nb + 1], Metric::Product)?.with_mu(mu)?;
    let law = SamplingLaw::single_block_weights(&weights, 1.0)?;
    let rt = res.clone();
    let transport = Transport::new("resolvent", move |x| {
        let mut out = vec![0.0; d];
        rt.apply(x.as_slice(), &mut out)?;
        Ok(out)
    });
    let embed = Transport::new("forward-shift", move |z| {
        let mut acc = vec![0.0; d];
        let mut t = vec![0.0; d];
        for b in &bs {
            b.apply(z.as_slice(), &mut t);
            acc.iter_mut().zip(&t).for_each(|(a, v)| *a += v);
        }
        Ok(z.as_slice().iter().zip(&acc).map(|(zv, a)| zv - gamma * a / big_n).collect())
    });
    PresetBundle::assemble(
        "mono",
        "resolvent splitting: S_i = (gamma/N) B_i o J_{gamma A}, S_{N+1} = I - J_{gamma A}",
        family,
        law,
        TriggerGraph::star_into_last(nb + 1)?,
        DelaySchedule::zero(),
        DualInit::AtStart,
        transport,
    )
    .map(|b| b.with_embed(embed))
}

/// `min_w max_z g1(w) + (1/N)(sum f_i(w) + <L w, z> - sum h_i(z)) - g2(z)` with `N - 1` smooth pairs.
#[derive(Debug, Clone)]
pub struct SaddleParts {
    pub g1: ProxFn,
    pub g2: ProxFn,
    /// Coupling matrix `L` mapping the `w` space into the `z` space.
    pub l: DMatrix<f64>,
    pub fs: Vec<Arc<dyn SmoothFn>>,
    pub hs: Vec<Arc<dyn SmoothFn>>,
}

/// `x = (w, z) -> (grad f(w), grad h(z))`
#[derive(Debug)]
struct PairGradient {
    f: Arc<dyn SmoothFn>,
    h: Arc<dyn SmoothFn>,
}

impl LipschitzMap for PairGradient {
    fn dim(&self) -> usize {
        self.f.dim() + self.h.dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let dw = self.f.dim();
        self.f.grad(&x[..dw], &mut out[..dw]);
        self.h.grad(&x[dw..], &mut out[dw..]);
    }

    fn lipschitz(&self) -> f64 {
        self.f.lipschitz().max(self.h.lipschitz())
    }
}

/// Saddle-point problems through [`mono`]: `A = (d g1, d g2)`, `B_N = (L^T z, -L w)`, `B_i = (grad f_i, grad h_i)`.
pub fn saddle(parts: SaddleParts, gamma: f64) -> Result<PresetBundle> {
    let SaddleParts { g1, g2, l, fs, hs } = parts;
    if fs.len() != hs.len() {
        return Err(Error::Dimension("need one h_i per f_i".into()));
    }
    let (dz, dw) = l.shape();
    if fs.iter().any(|f| f.dim() != dw) || hs.iter().any(|h| h.dim() != dz) {
        return Err(Error::Dimension("smooth terms must match the coupling matrix".into()));
    }
    let mut skew = DMatrix::zeros(dw + dz, dw + dz);
    skew.view_mut((0, dw), (dw, dz)).copy_from(&l.transpose());
    skew.view_mut((dw, 0), (dz, dw)).copy_from(&(-&l));
    let mut bs: Vec<Arc<dyn LipschitzMap>> = fs
        .into_iter()
        .zip(hs)
        .map(|(f, h)| Arc::new(PairGradient { f, h }) as Arc<dyn LipschitzMap>)
        .collect();
    bs.push(Arc::new(AffineMap::new(skew, DVector::zeros(dw + dz))?));
    let a = MonotoneOp::Product(vec![(dw, MonotoneOp::Subdiff(g1)), (dz, MonotoneOp::Subdiff(g2))]);
    let mut bundle = mono(a, bs, gamma)?;
    bundle.name = "saddle";
    bundle.provenance = format!("saddle point via {}", bundle.provenance);
    Ok(bundle)
}
