//! Incremental gradient, dual coordinate and projection methods.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{single_layout, PresetBundle, Transport};
use crate::blockspace::{BlockLayout, BlockVector, Metric};
use crate::engine::DualInit;
use crate::error::{Error, Result};
use crate::operators::{
    ConvexFn, FnOperator, GradAfterProxOp, GradientOp, Operator, OperatorFamily, ProxFn, ProxResidualOp, SmoothFn,
    SolutionSet, SubgradientProjectorOp, SumFn,
};
use crate::sampling::{importance_law, BlockMode, SamplingLaw, TriggerGraph};
use crate::schedule::{DelayMode, DelaySchedule};

fn common_dim(fs: &[Arc<dyn SmoothFn>]) -> Result<usize> {
    let d = fs.first().ok_or_else(|| Error::Config("need at least one function".into()))?.dim();
    if fs.iter().any(|f| f.dim() != d) {
        return Err(Error::Dimension("functions must share one dimension".into()));
    }
    Ok(d)
}

fn lipschitz_all(fs: &[Arc<dyn SmoothFn>]) -> Result<Vec<f64>> {
    let l: Vec<f64> = fs.iter().map(|f| f.lipschitz()).collect();
    if let Some(i) = l.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Config(format!("function {i} has Lipschitz constant {}", l[i])));
    }
    Ok(l)
}

fn mean_strong_convexity(fs: &[Arc<dyn SmoothFn>]) -> f64 {
    fs.iter().map(|f| f.strong_convexity()).sum::<f64>() / fs.len() as f64
}

fn gradient_ops(fs: &[Arc<dyn SmoothFn>], layout: &BlockLayout) -> Result<Vec<Arc<dyn Operator>>> {
    fs.iter()
        .map(|f| GradientOp::new(f.clone(), layout, 1.0).map(|op| Arc::new(op) as Arc<dyn Operator>))
        .collect()
}

/// `(1/N) sum_i grad f_i(w)`
fn mean_gradient(fs: &[Arc<dyn SmoothFn>], w: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; w.len()];
    let mut g = vec![0.0; w.len()];
    for f in fs {
        f.grad(w, &mut g);
        acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v);
    }
    acc.iter_mut().for_each(|a| *a /= fs.len() as f64);
    acc
}

/// SAGA on `(1/N) sum f_i`; `importance` samples `i` with probability `L_i / sum L`.
pub fn saga(fs: Vec<Arc<dyn SmoothFn>>, importance: bool) -> Result<PresetBundle> {
    let n = fs.len();
    let layout = single_layout(common_dim(&fs)?)?;
    let lips = lipschitz_all(&fs)?;
    let beta = lips.iter().map(|l| vec![1.0 / (n as f64 * l)]).collect();
    let family = OperatorFamily::new(layout.clone(), gradient_ops(&fs, &layout)?, beta, vec![vec![true]; n], Metric::Product)?
        .with_mu(mean_strong_convexity(&fs))?;
    let law = if importance { importance_law(&lips)? } else { SamplingLaw::uniform(n, 1.0)? };
    PresetBundle::assemble(
        "saga",
        "SAGA: x <- x - lambda (grad f_i(x) - y_i + mean(y)), then y_i <- grad f_i(x)",
        family,
        law,
        TriggerGraph::self_loops(n)?,
        DelaySchedule::zero(),
        DualInit::AtStart,
        Transport::identity(),
    )
    .map(|b| b.with_embed(Transport::identity()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SvrgMode {
    /// Full dual refresh with probability `1/tau` per iteration.
    Avg,
    /// Refresh every iteration, read through the cyclic delay `k mod (tau + 1)`.
    Scheduled,
}

/// SVRG: complete trigger graph, refreshed at random (`Avg`) or on a fixed cycle (`Scheduled`).
pub fn svrg(fs: Vec<Arc<dyn SmoothFn>>, tau: usize, mode: SvrgMode) -> Result<PresetBundle> {
    if tau == 0 {
        return Err(Error::Config("SVRG needs tau >= 1".into()));
    }
    let n = fs.len();
    let layout = single_layout(common_dim(&fs)?)?;
    let lips = lipschitz_all(&fs)?;
    let beta = lips.iter().map(|l| vec![1.0 / (n as f64 * l)]).collect();
    let family = OperatorFamily::new(layout.clone(), gradient_ops(&fs, &layout)?, beta, vec![vec![true]; n], Metric::Product)?
        .with_mu(mean_strong_convexity(&fs))?;
    let (rho, schedule, name, text) = match mode {
        SvrgMode::Avg => (
            1.0 / tau as f64,
            DelaySchedule::zero(),
            "svrg-avg",
            "SVRG: x <- x - lambda (grad f_i(x) - grad f_i(phi) + mean grad f(phi)); phi <- x with probability 1/tau",
        ),
        SvrgMode::Scheduled => (
            1.0,
            DelaySchedule::new(0, tau, DelayMode::Zero, DelayMode::Cyclic, 0)?,
            "svrg-sched",
            "SVRG: x <- x - lambda (grad f_i(x) - grad f_i(phi) + mean grad f(phi)); phi refreshed every tau + 1 iterations",
        ),
    };
    PresetBundle::assemble(
        name,
        text,
        family,
        SamplingLaw::uniform(n, rho)?,
        TriggerGraph::complete(n)?,
        schedule,
        DualInit::AtStart,
        Transport::identity(),
    )
    .map(|b| b.with_embed(Transport::identity()))
}

/// Finito on the duplicated space: `S(x)_j = x_j - (1/N) sum_l (x_l - gamma grad f_l(x_l))`.
pub fn finito(fs: Vec<Arc<dyn SmoothFn>>, gamma: f64) -> Result<PresetBundle> {
    let n = fs.len();
    let d = common_dim(&fs)?;
    let lips = lipschitz_all(&fs)?;
    let l = lips.iter().copied().fold(0.0, f64::max);
    if !(gamma > 0.0 && gamma <= 2.0 / l) {
        return Err(Error::Config(format!("finito gamma = {gamma} must lie in (0, 2/L]")));
    }
    let layout = Arc::new(BlockLayout::uniform(n, d)?);
    let fs_op = fs.clone();
    let op = FnOperator::new("finito", n, move |x, out| {
        let mut avg = vec![0.0; d];
        let mut g = vec![0.0; d];
        for (l, f) in fs_op.iter().enumerate() {
            let xl = x.block(l);
            f.grad(xl, &mut g);
            avg.iter_mut().zip(xl.iter().zip(&g)).for_each(|(a, (v, gv))| *a += v - gamma * gv);
        }
        avg.iter_mut().for_each(|a| *a /= n as f64);
        for j in 0..n {
            let r = x.layout().range(j);
            out[r.clone()].iter_mut().zip(x.block(j).iter().zip(&avg)).for_each(|(o, (v, a))| *o = v - a);
        }
        crate::error::check_finite("finito operator", out)
    });
    let mu_hat = fs.iter().map(|f| f.strong_convexity()).fold(f64::INFINITY, f64::min);
    let mu = 1.0 - (1.0 - 2.0 * gamma * mu_hat + gamma * gamma * mu_hat * l).max(0.0).sqrt();
    let family = OperatorFamily::new(
        layout.clone(),
        vec![Arc::new(op)],
        vec![vec![gamma * l / 4.0; n]],
        vec![vec![false; n]],
        Metric::Product,
    )?
    .with_mu(mu)?;
    let law = SamplingLaw::new(vec![1.0 / n as f64; n], vec![vec![1.0; n]], 1.0, BlockMode::SingleBlock)?;
    let transport = Transport::new("block-mean", move |x| {
        let mut w = vec![0.0; d];
        x.blocks().for_each(|b| w.iter_mut().zip(b).for_each(|(a, v)| *a += v / n as f64));
        Ok(w)
    });
    let embed = Transport::new("duplicate", move |w| Ok(w.as_slice().repeat(n)));
    PresetBundle::assemble(
        "finito",
        "Finito: x_j <- x_j - lambda/(q_j N) (x_j - mean_l (x_l - gamma grad f_l(x_l)))",
        family,
        law,
        TriggerGraph::self_loops(1)?,
        DelaySchedule::zero(),
        DualInit::Zero,
        transport,
    )
    .map(|b| b.with_embed(embed))
}

/// `prox_{sigma h}(v)` for `h(u) = f^*(-u)`, via `v + sigma prox_{f/sigma}(-v/sigma)`.
fn prox_neg_conjugate(f: &dyn SmoothFn, sigma: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
    let u: Vec<f64> = v.iter().map(|a| -a / sigma).collect();
    let mut p = vec![0.0; v.len()];
    f.prox(1.0 / sigma, &u, &mut p)?;
    out.iter_mut().zip(v.iter().zip(&p)).for_each(|(o, (a, b))| *o = a + sigma * b);
    Ok(())
}

/// SDCA for `min_w (1/N) sum f_j(w) + mu0 ||w||^2 / 2`, one dual block per function.
pub fn sdca(fs: Vec<Arc<dyn SmoothFn>>, mu0: f64) -> Result<PresetBundle> {
    if !(mu0 > 0.0 && mu0.is_finite()) {
        return Err(Error::Config(format!("sdca mu0 = {mu0} must be positive")));
    }
    let n = fs.len();
    let d = common_dim(&fs)?;
    let l = lipschitz_all(&fs)?.into_iter().fold(0.0, f64::max);
    let sigma = mu0 * n as f64;
    let probe = vec![0.0; d];
    for f in &fs {
        f.prox(1.0, &probe, &mut vec![0.0; d])?;
    }
    let layout = Arc::new(BlockLayout::uniform(n, d)?);
    let fs_op = fs.clone();
    let op = FnOperator::new("sdca", n, move |x, out| {
        let mut total = vec![0.0; d];
        x.blocks().for_each(|b| total.iter_mut().zip(b).for_each(|(a, v)| *a += v));
        let mut pr = vec![0.0; d];
        for (j, f) in fs_op.iter().enumerate() {
            let v: Vec<f64> = x.block(j).iter().zip(&total).map(|(a, t)| a - t).collect();
            prox_neg_conjugate(f.as_ref(), sigma, &v, &mut pr)?;
            let r = x.layout().range(j);
            out[r].iter_mut().zip(x.block(j).iter().zip(&pr)).for_each(|(o, (a, p))| *o = a - p);
        }
        crate::error::check_finite("sdca operator", out)
    });
    let family = OperatorFamily::new(layout, vec![Arc::new(op)], vec![vec![0.75; n]], vec![vec![false; n]], Metric::Product)?
        .with_mu(sigma / (sigma + l))?;
    let law = SamplingLaw::new(vec![1.0 / n as f64; n], vec![vec![1.0; n]], 1.0, BlockMode::SingleBlock)?;
    let transport = Transport::new("scaled-sum", move |x| {
        let mut w = vec![0.0; d];
        x.blocks().for_each(|b| w.iter_mut().zip(b).for_each(|(a, v)| *a += v / sigma));
        Ok(w)
    });
    let embed = Transport::new("negative-gradients", move |w| {
        let mut out = Vec::with_capacity(n * d);
        let mut g = vec![0.0; d];
        for f in &fs {
            f.grad(w.as_slice(), &mut g);
            out.extend(g.iter().map(|v| -v));
        }
        Ok(out)
    });
    PresetBundle::assemble(
        "sdca",
        "SDCA: x_j <- x_j - lambda/(q_j N) (x_j - prox_{mu0 N f_j^*(-.)}(x_j - sum_l x_l))",
        family,
        law,
        TriggerGraph::self_loops(1)?,
        DelaySchedule::zero(),
        DualInit::Zero,
        transport,
    )
    .map(|b| b.with_embed(embed))
}

/// Randomized projections onto sets and subgradient projections onto sublevel sets `{f <= 0}`.
pub fn projection(sets: Vec<ProxFn>, functions: Vec<ConvexFn>) -> Result<PresetBundle> {
    let n = sets.len() + functions.len();
    if n == 0 {
        return Err(Error::Config("projection preset needs sets or functions".into()));
    }
    let dims: Vec<usize> = sets
        .iter()
        .map(|s| s.dim().ok_or_else(|| Error::Config("projection sets need a dimension".into())))
        .chain(functions.iter().map(|f| Ok(f.dim())))
        .collect::<Result<_>>()?;
    if let Some(s) = sets.iter().find(|s| !s.is_indicator()) {
        return Err(Error::Config(format!("{s:?} is not a set indicator")));
    }
    let d = dims[0];
    if dims.iter().any(|&v| v != d) {
        return Err(Error::Dimension("sets and functions must share one dimension".into()));
    }
    let mut ops: Vec<Arc<dyn Operator>> = Vec::with_capacity(n);
    for s in sets {
        ops.push(Arc::new(ProxResidualOp::new(s, 1.0)?));
    }
    for f in functions {
        ops.push(Arc::new(SubgradientProjectorOp::new(f)?));
    }
    let family = OperatorFamily::new(
        single_layout(d)?,
        ops,
        vec![vec![1.0 / n as f64]; n],
        vec![vec![false]; n],
        Metric::Product,
    )?;
    PresetBundle::assemble(
        "projection",
        "randomized projection: x <- x - lambda (x - P_i x)",
        family,
        SamplingLaw::uniform(n, 1.0)?,
        TriggerGraph::self_loops(n)?,
        DelaySchedule::zero(),
        DualInit::Zero,
        Transport::identity(),
    )
    .map(|b| b.with_embed(Transport::identity()))
}

/// Randomized Kaczmarz on `A x = b`; rows are normalized on construction.
pub fn kaczmarz(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<PresetBundle> {
    let (n, d) = a.shape();
    if n == 0 || d == 0 || b.len() != n {
        return Err(Error::Dimension(format!("system {n} x {d} with rhs of length {}", b.len())));
    }
    let mut an = a.clone();
    let mut bn = b.clone();
    for r in 0..n {
        let norm = an.row(r).norm();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!("row {r} of A is zero")));
        }
        an.row_mut(r).unscale_mut(norm);
        bn[r] /= norm;
    }
    let ops: Vec<Arc<dyn Operator>> = (0..n)
        .map(|r| {
            let g = ProxFn::Hyperplane { a: an.row(r).iter().copied().collect(), b: bn[r] };
            ProxResidualOp::new(g, 1.0).map(|op| Arc::new(op) as Arc<dyn Operator>)
        })
        .collect::<Result<_>>()?;
    let layout = single_layout(d)?;
    let svd = an.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|s| **s > 1e-12 * smax).count();
    let smin = svd
        .singular_values
        .iter()
        .copied()
        .filter(|s| *s > 1e-12 * smax)
        .fold(f64::INFINITY, f64::min);
    let mut family = OperatorFamily::new(
        layout.clone(),
        ops,
        vec![vec![1.0 / n as f64]; n],
        vec![vec![false]; n],
        Metric::Product,
    )?
    .with_mu(smin * smin / n as f64)?;
    let base = svd.solve(&bn, 1e-12 * smax).map_err(|e| Error::Numerical(e.to_string()))?;
    if (&an * &base - &bn).norm() <= 1e-9 * (1.0 + bn.norm()) {
        let x = BlockVector::new(layout.clone(), base.iter().copied().collect())?;
        family = family.with_root(x.clone())?;
        if rank < d {
            let eig = nalgebra::SymmetricEigen::new(an.transpose() * &an);
            let cut = 1e-12 * smax * smax;
            let null: Vec<DVector<f64>> = (0..d)
                .filter(|&k| eig.eigenvalues[k] <= cut)
                .map(|k| eig.eigenvectors.column(k).into_owned())
                .collect();
            let basis = DMatrix::from_columns(&null);
            family = family.with_solution(SolutionSet::Affine { base: x, basis });
        }
    }
    PresetBundle::assemble(
        "kaczmarz",
        "randomized Kaczmarz: x <- x - lambda (<a_i, x> - b_i) a_i with unit rows a_i",
        family,
        SamplingLaw::uniform(n, 1.0)?,
        TriggerGraph::self_loops(n)?,
        DelaySchedule::zero(),
        DualInit::Zero,
        Transport::identity(),
    )
    .map(|b| b.with_embed(Transport::identity()))
}

/// Proximal SAGA on `(1/N) sum f_i + g`; `gamma` defaults to `1/L`.
pub fn prox_saga(fs: Vec<Arc<dyn SmoothFn>>, g: ProxFn, gamma: Option<f64>) -> Result<PresetBundle> {
    let nf = fs.len();
    let d = common_dim(&fs)?;
    g.validate()?;
    if g.dim().is_some_and(|gd| gd != d) {
        return Err(Error::Dimension("prox term dimension".into()));
    }
    let l = lipschitz_all(&fs)?.into_iter().fold(0.0, f64::max);
    let gamma = gamma.unwrap_or(1.0 / l);
    if !(gamma > 0.0 && gamma < 2.0 / l) {
        return Err(Error::Config(format!("prox-SAGA gamma = {gamma} must lie in (0, 2/L)")));
    }
    let big_n = nf as f64;
    let mut ops: Vec<Arc<dyn Operator>> = Vec::with_capacity(nf + 1);
    for f in &fs {
        ops.push(Arc::new(GradAfterProxOp::new(f.clone(), g.clone(), gamma, gamma / big_n)?));
    }
    ops.push(Arc::new(ProxResidualOp::new(g.clone(), gamma)?));
    let mut beta = vec![vec![big_n / (2.0 * gamma * l * (big_n + 1.0))]; nf];
    beta.push(vec![(1.0 - gamma * l / 2.0) / (big_n + 1.0)]);
    let mu_f = mean_strong_convexity(&fs);
    let mu_g = g.strong_convexity();
    let mu = (1.0 + gamma * mu_g - (1.0 - 2.0 * gamma * mu_f + gamma * gamma * l * mu_f).max(0.0).sqrt())
        / ((big_n + 1.0) * (1.0 + gamma * mu_g));
    let family =
        OperatorFamily::new(single_layout(d)?, ops, beta, vec![vec![true]; nf + 1], Metric::Product)?.with_mu(mu.max(0.0))?;
    let mut p: Vec<Vec<f64>> = vec![vec![0.5 / big_n]; nf];
    p.push(vec![0.5]);
    let law = SamplingLaw::new(vec![1.0], p, 1.0, BlockMode::IndependentBernoulli)?;
    let gt = g.clone();
    let transport = Transport::new("prox", move |x| {
        let mut out = vec![0.0; x.as_slice().len()];
        gt.prox(gamma, x.as_slice(), &mut out)?;
        Ok(out)
    });
    let embed = Transport::new("gradient-shift", move |w| {
        let gr = mean_gradient(&fs, w.as_slice());
        Ok(w.as_slice().iter().zip(&gr).map(|(a, b)| a - gamma * b).collect())
    });
    PresetBundle::assemble(
        "prox-saga",
        "proximal SAGA: S_i = (gamma/N) grad f_i o prox_{gamma g}, S_{N+1} = I - prox_{gamma g}, star into N+1",
        family,
        law,
        TriggerGraph::star_into_last(nf + 1)?,
        DelaySchedule::zero(),
        DualInit::AtStart,
        transport,
    )
    .map(|b| b.with_embed(embed))
}

/// Coherence constants for block-coordinate SAGA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordinateBeta {
    /// `beta_ij = 1 / (N L_i)`
    Global,
    /// `beta_ij = 1 / (N s_i L_ij)` with `s_i` the largest coupling count of `f_i`.
    Coordinatewise,
}

/// SAGA with single-block coordinate sampling `q_j = 1/m`.
pub fn coordinate_saga(fs: Vec<Arc<dyn SmoothFn>>, layout: Arc<BlockLayout>, beta_mode: CoordinateBeta) -> Result<PresetBundle> {
    let n = fs.len();
    let m = layout.m();
    if common_dim(&fs)? != layout.total() {
        return Err(Error::Dimension("functions do not match the layout".into()));
    }
    let lips = lipschitz_all(&fs)?;
    let zero: Vec<Vec<bool>> = fs.iter().map(|f| f.zero_blocks(&layout)).collect();
    let mut beta = vec![vec![0.0; m]; n];
    for (i, f) in fs.iter().enumerate() {
        let (bl, s) = match beta_mode {
            CoordinateBeta::Global => (vec![lips[i]; m], 1.0),
            CoordinateBeta::Coordinatewise => {
                let s = f.coupling(&layout).iter().map(|c| c.len()).max().unwrap_or(1).max(1);
                (f.block_lipschitz(&layout), s as f64)
            }
        };
        for j in 0..m {
            if !zero[i][j] {
                if !(bl[j] > 0.0) {
                    return Err(Error::Config(format!("block Lipschitz constant of f_{i} on block {j} is {}", bl[j])));
                }
                beta[i][j] = 1.0 / (n as f64 * s * bl[j]);
            }
        }
    }
    let mut p = vec![vec![0.0; m]; n];
    for j in 0..m {
        let live = (0..n).filter(|&i| !zero[i][j]).count();
        if live == 0 {
            return Err(Error::Degenerate(format!("block {j} is untouched by every function")));
        }
        (0..n).filter(|&i| !zero[i][j]).for_each(|i| p[i][j] = 1.0 / live as f64);
    }
    let star = zero.iter().map(|r| r.iter().map(|z| !z).collect()).collect();
    let family = OperatorFamily::new(layout.clone(), gradient_ops(&fs, &layout)?, beta, star, Metric::Product)?
        .with_mu(mean_strong_convexity(&fs))?;
    let mode = if m == 1 { BlockMode::IndependentBernoulli } else { BlockMode::SingleBlock };
    let law = SamplingLaw::new(vec![1.0 / m as f64; m], p, 1.0, mode)?;
    PresetBundle::assemble(
        "coordinate-saga",
        "coordinate SAGA: x_j <- x_j - lambda m (grad_j f_i(x) - y_ij + mean_l y_lj) on one sampled block",
        family,
        law,
        TriggerGraph::self_loops(n)?,
        DelaySchedule::zero(),
        DualInit::AtStart,
        Transport::identity(),
    )
    .map(|b| b.with_embed(Transport::identity()))
}

/// Pre-update mini batching: SVRG-avg on `h_B = sum_{i in B} f_i / N(i)`.
pub fn minibatch_pre(fs: Vec<Arc<dyn SmoothFn>>, batches: &[Vec<usize>], tau: usize) -> Result<PresetBundle> {
    let mut count = vec![0usize; fs.len()];
    for b in batches {
        if b.is_empty() {
            return Err(Error::Config("empty mini batch".into()));
        }
        for &i in b {
            *count.get_mut(i).ok_or_else(|| Error::Index(format!("batch member {i}")))? += 1;
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!("function {i} belongs to no batch")));
    }
    let hs: Vec<Arc<dyn SmoothFn>> = batches
        .iter()
        .map(|b| {
            SumFn::new(b.iter().map(|&i| (1.0 / count[i] as f64, fs[i].clone())).collect())
                .map(|s| Arc::new(s) as Arc<dyn SmoothFn>)
        })
        .collect::<Result<_>>()?;
    let mut bundle = svrg(hs, tau, SvrgMode::Avg)?;
    bundle.name = "minibatch-pre";
    bundle.provenance = format!("pre-update mini batching over {} batches; {}", batches.len(), bundle.provenance);
    Ok(bundle)
}

/// Post-update mini batching: SAGA with the supplied trigger graph.
pub fn minibatch_post(fs: Vec<Arc<dyn SmoothFn>>, graph: TriggerGraph) -> Result<PresetBundle> {
    let b = saga(fs, false)?;
    let law = b.law.clone();
    let mut b = b.with_law(law, graph)?;
    b.steps = super::default_steps(&b.family, &b.law, &b.graph, &b.schedule)?;
    b.name = "minibatch-post";
    b.provenance = "post-update mini batching: SAGA where drawing i refreshes every dual it triggers".into();
    Ok(b)
}
