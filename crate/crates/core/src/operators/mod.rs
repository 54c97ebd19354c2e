//! Operators `S_i : H -> H`, operator families and their property verifiers.

pub mod convex;
pub mod prox;
pub mod resolvent;
pub mod smooth;

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::blockspace::{dot, BlockLayout, BlockVector, Metric};
use crate::error::{check_finite, Error, Result};
use crate::rng::{stream, Stream};

pub use convex::{subgradient_step, ConvexFn};
pub use prox::ProxFn;
pub use resolvent::{resolvent_op, AffineMap, GradientMap, LipschitzMap, MonotoneOp, Resolvent};
pub use smooth::{finite_difference_grad, LeastSquares, Logistic, Quadratic, SmoothFn, SumFn};

/// A map on the block space with per-block evaluation.
///
/// `eval` writes the full value `S(x)` into `out` (length = total dimension).
pub trait Operator: Send + Sync + Debug {
    fn eval(&self, x: &BlockVector, out: &mut [f64]) -> Result<()>;

    /// Writes `(S(x))_j` into `out` (length = `dims[j]`).
    fn eval_block(&self, x: &BlockVector, j: usize, out: &mut [f64]) -> Result<()> {
        let layout = x.layout();
        layout.check_block(j)?;
        if self.is_zero_block(j) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return Ok(());
        }
        let mut full = vec![0.0; layout.total()];
        self.eval(x, &mut full)?;
        out.copy_from_slice(&full[layout.range(j)]);
        Ok(())
    }

    /// Writes the listed blocks into their slots of the full-length `out`.
    fn eval_blocks(&self, x: &BlockVector, blocks: &[usize], out: &mut [f64]) -> Result<()> {
        let layout = x.layout().clone();
        if blocks.len() == layout.m() {
            return self.eval(x, out);
        }
        for &j in blocks {
            self.eval_block(x, j, &mut out[layout.range(j)])?;
        }
        Ok(())
    }

    /// True when `(S(.))_j` vanishes identically.
    fn is_zero_block(&self, _j: usize) -> bool {
        false
    }
}

/// `S(x) = scale * grad f(x)`.
#[derive(Debug, Clone)]
pub struct GradientOp {
    f: Arc<dyn SmoothFn>,
    scale: f64,
    zero: Vec<bool>,
}

impl GradientOp {
    pub fn new(f: Arc<dyn SmoothFn>, layout: &BlockLayout, scale: f64) -> Result<Self> {
        if f.dim() != layout.total() {
            return Err(Error::Dimension(format!(
                "function of dim {} on layout of total {}",
                f.dim(),
                layout.total()
            )));
        }
        let zero = f.zero_blocks(layout);
        Ok(Self { f, scale, zero })
    }

    pub fn function(&self) -> &Arc<dyn SmoothFn> {
        &self.f
    }
}

impl Operator for GradientOp {
    fn eval(&self, x: &BlockVector, out: &mut [f64]) -> Result<()> {
        self.f.grad(x.as_slice(), out);
        if self.scale != 1.0 {
            out.iter_mut().for_each(|o| *o *= self.scale);
        }
        check_finite("gradient", out)
    }

    fn is_zero_block(&self, j: usize) -> bool {
        self.zero[j]
    }
}

/// Gradient operator together with its SAGA-scaled coherence constant `1 / (L n)`.
pub fn gradient_op(f: Arc<dyn SmoothFn>, layout: &BlockLayout, n: usize) -> Result<(GradientOp, f64)> {
    let l = f.lipschitz();
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Config(format!("Lipschitz constant {l} must be positive")));
    }
    Ok((GradientOp::new(f, layout, 1.0)?, 1.0 / (l * n as f64)))
}

/// `S(x) = x - prox_{gamma g}(x)`; for indicators this is `x - P_C x`.
#[derive(Debug, Clone)]
pub struct ProxResidualOp {
    g: ProxFn,
    gamma: f64,
}

impl ProxResidualOp {
    pub fn new(g: ProxFn, gamma: f64) -> Result<Self> {
        g.validate()?;
        if !(gamma > 0.0) {
            return Err(Error::Config("prox step must be positive".into()));
        }
        Ok(Self { g, gamma })
    }
}

impl Operator for ProxResidualOp {
    fn eval(&self, x: &BlockVector, out: &mut [f64]) -> Result<()> {
        self.g.prox(self.gamma, x.as_slice(), out)?;
        for (o, v) in out.iter_mut().zip(x.as_slice()) {
            *o = v - *o;
        }
        Ok(())
    }
}

/// `S(x) = x - G_f(x)` for the subgradient projector of `f`.
#[derive(Debug, Clone)]
pub struct SubgradientProjectorOp {
    f: ConvexFn,
}

impl SubgradientProjectorOp {
    pub fn new(f: ConvexFn) -> Result<Self> {
        f.validate()?;
        Ok(Self { f })
    }
}

/// Operator for the subgradient projector of `f`.
pub fn subgradient_projector(f: ConvexFn) -> Result<SubgradientProjectorOp> {
    SubgradientProjectorOp::new(f)
}

impl Operator for SubgradientProjectorOp {
    fn eval(&self, x: &BlockVector, out: &mut [f64]) -> Result<()> {
        subgradient_step(&self.f, x.as_slice(), out)
    }
}

/// `S(x) = scale * grad f(prox_{gamma g}(x))`
#[derive(Debug, Clone)]
pub struct GradAfterProxOp {
    f: Arc<dyn SmoothFn>,
    g: ProxFn,
    gamma: f64,
    scale: f64,
}

impl GradAfterProxOp {
    pub fn new(f: Arc<dyn SmoothFn>, g: ProxFn, gamma: f64, scale: f64) -> Result<Self> {
        g.validate()?;
        Ok(Self { f, g, gamma, scale })
    }
}

impl Operator for GradAfterProxOp {
    fn eval(&self, x: &BlockVector, out: &mut [f64]) -> Result<()> {
        let mut z = vec![0.0; out.len()];
        self.g.prox(self.gamma, x.as_slice(), &mut z)?;
        self.f.grad(&z, out);
        out.iter_mut().for_each(|o| *o *= self.scale);
        check_finite("gradient", out)
    }
}

type EvalFn = dyn Fn(&BlockVector, &mut [f64]) -> Result<()> + Send + Sync;

/// Operator from a closure, for user extensions and tests.
#[derive(Clone)]
pub struct FnOperator {
    f: Arc<EvalFn>,
    zero: Vec<bool>,
    label: String,
}

impl FnOperator {
    pub fn new(
        label: impl Into<String>,
        m: usize,
        f: impl Fn(&BlockVector, &mut [f64]) -> Result<()> + Send + Sync + 'static,
    ) -> Self {
        Self { f: Arc::new(f), zero: vec![false; m], label: label.into() }
    }

    pub fn with_zero_blocks(mut self, zero: Vec<bool>) -> Self {
        self.zero = zero;
        self
    }
}

impl Debug for FnOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FnOperator({})", self.label)
    }
}

impl Operator for FnOperator {
    fn eval(&self, x: &BlockVector, out: &mut [f64]) -> Result<()> {
        (self.f)(x, out)?;
        let layout = x.layout();
        for (j, z) in self.zero.iter().enumerate() {
            if *z {
                out[layout.range(j)].iter_mut().for_each(|o| *o = 0.0);
            }
        }
        Ok(())
    }

    fn is_zero_block(&self, j: usize) -> bool {
        self.zero[j]
    }
}

/// Description of the zero set used by distance diagnostics.
#[derive(Debug, Clone)]
pub enum SolutionSet {
    Point(BlockVector),
    /// `base + span(basis)` with orthonormal columns; Euclidean projection.
    Affine { base: BlockVector, basis: DMatrix<f64> },
}

impl SolutionSet {
    pub fn project(&self, x: &BlockVector) -> Result<BlockVector> {
        match self {
            SolutionSet::Point(p) => {
                x.same_layout(p)?;
                Ok(p.clone())
            }
            SolutionSet::Affine { base, basis } => {
                let d = x.sub(base)?;
                let v = nalgebra::DVector::from_column_slice(d.as_slice());
                let proj = basis * (basis.transpose() * v);
                let data = base.as_slice().iter().zip(proj.iter()).map(|(b, p)| b + p).collect();
                base.with_data(data)
            }
        }
    }

    pub fn representative(&self) -> &BlockVector {
        match self {
            SolutionSet::Point(p) => p,
            SolutionSet::Affine { base, .. } => base,
        }
    }
}

/// Result of a randomized property check.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub trials: usize,
    /// Largest scaled violation `(lhs - rhs) / (1 + scale)`; negative means slack remained.
    pub max_violation: f64,
    #[serde(skip)]
    pub witness: Option<BlockVector>,
    pub passed: bool,
}

/// The operators `S_1..S_n` with their coherence data.
#[derive(Debug, Clone)]
pub struct OperatorFamily {
    layout: Arc<BlockLayout>,
    ops: Vec<Arc<dyn Operator>>,
    beta: Vec<Vec<f64>>,
    star: Vec<Vec<bool>>,
    metric: Metric,
    mu: Option<f64>,
    known_root: Option<BlockVector>,
    solution: Option<SolutionSet>,
}

impl OperatorFamily {
    pub fn new(
        layout: Arc<BlockLayout>,
        ops: Vec<Arc<dyn Operator>>,
        beta: Vec<Vec<f64>>,
        star: Vec<Vec<bool>>,
        metric: Metric,
    ) -> Result<Self> {
        let (n, m) = (ops.len(), layout.m());
        if n == 0 {
            return Err(Error::Config("operator family is empty".into()));
        }
        if beta.len() != n || beta.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension(format!("beta must be {n} x {m}")));
        }
        if star.len() != n || star.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension(format!("star pattern must be {n} x {m}")));
        }
        metric.check_layout(&layout)?;
        for (i, op) in ops.iter().enumerate() {
            for j in 0..m {
                let b = beta[i][j];
                if !(b.is_finite() && b >= 0.0) {
                    return Err(Error::Config(format!("beta[{i}][{j}] = {b}")));
                }
                if !op.is_zero_block(j) && b <= 0.0 {
                    return Err(Error::Config(format!("beta[{i}][{j}] must be positive")));
                }
            }
        }
        Ok(Self { layout, ops, beta, star, metric, mu: None, known_root: None, solution: None })
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::Config(format!("mu = {mu}")));
        }
        self.mu = Some(mu);
        Ok(self)
    }

    /// Attaches a root, checking `||S(x*)|| <= 1e-10 (1 + ||x*||_inf)` and the star pattern.
    pub fn with_root(mut self, root: BlockVector) -> Result<Self> {
        root.same_layout(&BlockVector::zeros(self.layout.clone()))?;
        let tol = 1e-10 * (1.0 + root.max_abs());
        let values = self.eval_all(&root)?;
        let mut agg = vec![0.0; self.layout.total()];
        for v in &values {
            for (a, b) in agg.iter_mut().zip(v) {
                *a += b / self.n() as f64;
            }
        }
        let res = self.metric.norm(&root.with_data(agg)?)?;
        if res > tol {
            return Err(Error::Numerical(format!("declared root has residual {res:e}")));
        }
        for (i, v) in values.iter().enumerate() {
            for j in 0..self.m() {
                let blk = &v[self.layout.range(j)];
                if !self.star[i][j] && blk.iter().any(|b| b.abs() > tol) {
                    return Err(Error::Config(format!("S_{i}(x*) block {j} nonzero but star is unset")));
                }
            }
        }
        if self.solution.is_none() {
            self.solution = Some(SolutionSet::Point(root.clone()));
        }
        self.known_root = Some(root);
        Ok(self)
    }

    pub fn with_solution(mut self, s: SolutionSet) -> Self {
        self.solution = Some(s);
        self
    }

    pub fn n(&self) -> usize {
        self.ops.len()
    }

    pub fn m(&self) -> usize {
        self.layout.m()
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn ops(&self) -> &[Arc<dyn Operator>] {
        &self.ops
    }

    pub fn op(&self, i: usize) -> &Arc<dyn Operator> {
        &self.ops[i]
    }

    pub fn beta(&self) -> &[Vec<f64>] {
        &self.beta
    }

    pub fn star(&self) -> &[Vec<bool>] {
        &self.star
    }

    /// True when `S_i(x*) = 0` for every `i`, i.e. all duals are pinned to zero.
    pub fn star_is_zero(&self) -> bool {
        self.star.iter().flatten().all(|s| !s)
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn mu(&self) -> Option<f64> {
        self.mu
    }

    pub fn known_root(&self) -> Option<&BlockVector> {
        self.known_root.as_ref()
    }

    pub fn solution(&self) -> Option<&SolutionSet> {
        self.solution.as_ref()
    }

    pub fn zero_block(&self, i: usize, j: usize) -> bool {
        self.ops[i].is_zero_block(j)
    }

    fn check(&self, x: &BlockVector) -> Result<()> {
        if x.layout().as_ref() != self.layout.as_ref() {
            return Err(Error::Dimension(format!(
                "point layout {:?} vs family layout {:?}",
                x.layout().dims(),
                self.layout.dims()
            )));
        }
        Ok(())
    }

    /// Full values `S_i(x)` for every `i`.
    pub fn eval_all(&self, x: &BlockVector) -> Result<Vec<Vec<f64>>> {
        self.check(x)?;
        self.ops
            .iter()
            .map(|op| {
                let mut v = vec![0.0; self.layout.total()];
                op.eval(x, &mut v)?;
                Ok(v)
            })
            .collect()
    }

    /// `S(x) = n^{-1} sum_i S_i(x)`
    pub fn aggregate(&self, x: &BlockVector) -> Result<BlockVector> {
        let n = self.n() as f64;
        let mut agg = vec![0.0; self.layout.total()];
        for v in self.eval_all(x)? {
            for (a, b) in agg.iter_mut().zip(&v) {
                *a += b;
            }
        }
        agg.iter_mut().for_each(|a| *a /= n);
        x.with_data(agg)
    }

    fn sample_point(&self, center: &BlockVector, rng: &mut impl Rng) -> Result<BlockVector> {
        let scale = (1.0 + center.max_abs()) * 10f64.powf(rng.random_range(-2.0..1.0));
        let total = self.layout.total();
        let single = if self.m() > 1 && rng.random_bool(0.25) {
            Some(rng.random_range(0..self.m()))
        } else {
            None
        };
        let mut data = center.as_slice().to_vec();
        let width = (total as f64).sqrt();
        for j in 0..self.m() {
            if single.is_some_and(|s| s != j) {
                continue;
            }
            for r in self.layout.range(j) {
                let u: f64 = rng.sample(StandardNormal);
                data[r] += scale * u / width;
            }
        }
        center.with_data(data)
    }

    /// Randomized check of the coherence inequality
    /// `sum_j sum_i beta_ij ||S_i(x)_j - S_i(x*)_j||^2 <= <S(x), x - x*>`.
    pub fn verify_coherence(&self, trials: usize, slack: f64, seed: u64) -> Result<PropertyReport> {
        let root = self
            .known_root
            .as_ref()
            .ok_or_else(|| Error::Capability("coherence check needs a known root".into()))?;
        let at_root = self.eval_all(root)?;
        let mut rng = stream(seed, Stream::Verify);
        let mut worst = f64::NEG_INFINITY;
        let mut witness = None;
        for _ in 0..trials {
            let x = self.sample_point(root, &mut rng)?;
            let vals = self.eval_all(&x)?;
            let mut lhs = 0.0;
            for (i, (v, v0)) in vals.iter().zip(&at_root).enumerate() {
                for j in 0..self.m() {
                    let r = self.layout.range(j);
                    let d2: f64 = v[r.clone()].iter().zip(&v0[r]).map(|(a, b)| (a - b) * (a - b)).sum();
                    lhs += self.beta[i][j] * d2;
                }
            }
            let agg = self.aggregate(&x)?;
            let diff = x.sub(root)?;
            let rhs = self.metric.inner(&agg, &diff)?;
            let viol = (lhs - rhs) / (1.0 + lhs.abs().max(rhs.abs()));
            if viol > worst {
                worst = viol;
                witness = Some(x);
            }
        }
        Ok(PropertyReport { trials, max_violation: worst, witness, passed: worst <= slack })
    }

    /// Randomized check of `<S(x), x - P(x)> >= mu ||x - P(x)||^2`.
    pub fn verify_quasi_monotone(&self, trials: usize, slack: f64, seed: u64) -> Result<PropertyReport> {
        let mu = self
            .mu
            .ok_or_else(|| Error::Capability("quasi-monotonicity check needs mu".into()))?;
        let sol = self
            .solution
            .as_ref()
            .ok_or_else(|| Error::Capability("quasi-monotonicity check needs a solution set".into()))?;
        if matches!(sol, SolutionSet::Affine { .. }) && !matches!(self.metric, Metric::Product) {
            return Err(Error::Capability("affine solution projection needs the product metric".into()));
        }
        let center = sol.representative().clone();
        let mut rng = stream(seed, Stream::Verify);
        let mut worst = f64::NEG_INFINITY;
        let mut witness = None;
        for _ in 0..trials {
            let x = self.sample_point(&center, &mut rng)?;
            let p = sol.project(&x)?;
            let diff = x.sub(&p)?;
            let lhs = self.metric.inner(&self.aggregate(&x)?, &diff)?;
            let rhs = mu * self.metric.norm_sq(&diff)?;
            let viol = (rhs - lhs) / (1.0 + lhs.abs().max(rhs.abs()));
            if viol > worst {
                worst = viol;
                witness = Some(x);
            }
        }
        Ok(PropertyReport { trials, max_violation: worst, witness, passed: worst <= slack })
    }

    /// Replaces beta by `factor * beta` (used to construct counterexamples).
    pub fn scaled_beta(&self, factor: f64) -> Self {
        let mut f = self.clone();
        f.beta.iter_mut().flatten().for_each(|b| *b *= factor);
        f
    }

    /// Replaces mu by `mu` without validation of the property.
    pub fn with_mu_unchecked(&self, mu: Option<f64>) -> Self {
        let mut f = self.clone();
        f.mu = mu;
        f
    }
}

/// Euclidean norm helper for slices.
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
