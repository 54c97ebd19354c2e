//! Smooth convex functions with gradients, Lipschitz data and (where cheap) prox.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};

use crate::blockspace::{dot, BlockLayout};
use crate::error::{Error, Result};

/// A differentiable convex function on `R^d` with Lipschitz gradient.
pub trait SmoothFn: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64], out: &mut [f64]);
    /// Lipschitz constant of the gradient.
    fn lipschitz(&self) -> f64;
    fn strong_convexity(&self) -> f64 {
        0.0
    }
    /// `argmin_z f(z) + ||z - v||^2 / (2t)`
    fn prox(&self, _t: f64, _v: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::Capability(format!("prox of {self:?}")))
    }
    /// Lipschitz constants of the partial gradients `grad_j f` along block `j`.
    fn block_lipschitz(&self, layout: &BlockLayout) -> Vec<f64>;
    /// Blocks `j` with `grad_j f` identically zero.
    fn zero_blocks(&self, layout: &BlockLayout) -> Vec<bool> {
        vec![false; layout.m()]
    }
    /// For every block `j`, the blocks `j'` whose partial gradient depends on `x_j`.
    fn coupling(&self, layout: &BlockLayout) -> Vec<Vec<usize>> {
        vec![(0..layout.m()).collect(); layout.m()]
    }
}

fn sym_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let e = m.clone().symmetric_eigen().eigenvalues;
    (e.min(), e.max())
}

fn sub_block(m: &DMatrix<f64>, layout: &BlockLayout, a: usize, b: usize) -> DMatrix<f64> {
    let (ra, rb) = (layout.range(a), layout.range(b));
    m.view((ra.start, rb.start), (ra.len(), rb.len())).into_owned()
}

/// `f(x) = x^T Q x / 2 - c^T x + k` with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct Quadratic {
    q: DMatrix<f64>,
    c: DVector<f64>,
    constant: f64,
    lip: f64,
    sc: f64,
}

impl Quadratic {
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if !q.is_square() || q.nrows() != c.len() {
            return Err(Error::Dimension("quadratic: Q must be square and match c".into()));
        }
        let q = (&q + q.transpose()) * 0.5;
        let (lo, hi) = sym_extremes(&q);
        if lo < -1e-10 * hi.abs().max(1.0) {
            return Err(Error::Spectral(format!("quadratic is not convex (eig {lo:e})")));
        }
        Ok(Self { q, c, constant: 0.0, lip: hi.max(0.0), sc: lo.max(0.0) })
    }

    /// `f(x) = w ||x - center||^2 / 2`
    pub fn isotropic(weight: f64, center: &[f64]) -> Result<Self> {
        let d = center.len();
        let c = DVector::from_column_slice(center) * weight;
        let mut f = Self::new(DMatrix::identity(d, d) * weight, c)?;
        f.constant = 0.5 * weight * dot(center, center);
        Ok(f)
    }

    pub fn with_constant(mut self, k: f64) -> Self {
        self.constant = k;
        self
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }
}

impl SmoothFn for Quadratic {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        0.5 * v.dot(&(&self.q * &v)) - self.c.dot(&v) + self.constant
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for r in 0..d {
            let mut s = -self.c[r];
            for (col, xv) in x.iter().enumerate() {
                s += self.q[(r, col)] * xv;
            }
            out[r] = s;
        }
    }

    fn lipschitz(&self) -> f64 {
        self.lip
    }

    fn strong_convexity(&self) -> f64 {
        self.sc
    }

    fn prox(&self, t: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let m = DMatrix::identity(d, d) + &self.q * t;
        let rhs = DVector::from_column_slice(v) + &self.c * t;
        let z = m
            .cholesky()
            .ok_or_else(|| Error::Numerical("quadratic prox factorization".into()))?
            .solve(&rhs);
        out.copy_from_slice(z.as_slice());
        Ok(())
    }

    fn block_lipschitz(&self, layout: &BlockLayout) -> Vec<f64> {
        (0..layout.m()).map(|j| sym_extremes(&sub_block(&self.q, layout, j, j)).1.max(0.0)).collect()
    }

    fn zero_blocks(&self, layout: &BlockLayout) -> Vec<bool> {
        (0..layout.m())
            .map(|j| {
                let r = layout.range(j);
                r.clone().all(|row| self.c[row] == 0.0 && self.q.row(row).iter().all(|v| *v == 0.0))
            })
            .collect()
    }

    fn coupling(&self, layout: &BlockLayout) -> Vec<Vec<usize>> {
        (0..layout.m())
            .map(|j| {
                (0..layout.m())
                    .filter(|&jp| sub_block(&self.q, layout, jp, j).iter().any(|v| *v != 0.0))
                    .collect()
            })
            .collect()
    }
}

/// `f(x) = ||A x - b||^2 / 2 + ridge ||x||^2 / 2`
#[derive(Debug, Clone)]
pub struct LeastSquares {
    a: DMatrix<f64>,
    b: DVector<f64>,
    ridge: f64,
    lip: f64,
    sc: f64,
}

impl LeastSquares {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, ridge: f64) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Dimension("least squares: rows of A vs b".into()));
        }
        if !(ridge >= 0.0) {
            return Err(Error::Config("ridge must be nonnegative".into()));
        }
        let (lo, hi) = sym_extremes(&(a.transpose() * &a));
        let lo = if a.nrows() < a.ncols() { 0.0 } else { lo.max(0.0) };
        Ok(Self { a, b, ridge, lip: hi.max(0.0) + ridge, sc: lo + ridge })
    }

    /// Single-row term `(<a, x> - b)^2 / 2 + ridge ||x||^2 / 2`.
    pub fn row(a: &[f64], b: f64, ridge: f64) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(1, a.len(), a), DVector::from_element(1, b), ridge)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    fn hessian(&self) -> DMatrix<f64> {
        let d = self.a.ncols();
        self.a.transpose() * &self.a + DMatrix::identity(d, d) * self.ridge
    }
}

impl SmoothFn for LeastSquares {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        0.5 * (&self.a * &v - &self.b).norm_squared() + 0.5 * self.ridge * v.norm_squared()
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        for (o, xv) in out.iter_mut().zip(x) {
            *o = self.ridge * xv;
        }
        for r in 0..self.a.nrows() {
            let row = self.a.row(r);
            let res = row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - self.b[r];
            for (o, a) in out.iter_mut().zip(row.iter()) {
                *o += res * a;
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        self.lip
    }

    fn strong_convexity(&self) -> f64 {
        self.sc
    }

    fn prox(&self, t: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let m = DMatrix::identity(d, d) + self.hessian() * t;
        let rhs = DVector::from_column_slice(v) + self.a.transpose() * &self.b * t;
        let z = m
            .cholesky()
            .ok_or_else(|| Error::Numerical("least-squares prox factorization".into()))?
            .solve(&rhs);
        out.copy_from_slice(z.as_slice());
        Ok(())
    }

    fn block_lipschitz(&self, layout: &BlockLayout) -> Vec<f64> {
        let h = self.hessian();
        (0..layout.m()).map(|j| sym_extremes(&sub_block(&h, layout, j, j)).1.max(0.0)).collect()
    }

    fn coupling(&self, layout: &BlockLayout) -> Vec<Vec<usize>> {
        let h = self.hessian();
        (0..layout.m())
            .map(|j| {
                (0..layout.m())
                    .filter(|&jp| sub_block(&h, layout, jp, j).iter().any(|v| *v != 0.0))
                    .collect()
            })
            .collect()
    }
}

/// `f(x) = log(1 + exp(-y <a, x>)) + ridge ||x||^2 / 2` with label `y`.
#[derive(Debug, Clone)]
pub struct Logistic {
    a: Vec<f64>,
    label: f64,
    ridge: f64,
}

impl Logistic {
    pub fn new(a: Vec<f64>, label: f64, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0) || !label.is_finite() {
            return Err(Error::Config("logistic: ridge >= 0 and finite label required".into()));
        }
        Ok(Self { a, label, ridge })
    }

    fn margin_derivative(&self, x: &[f64]) -> f64 {
        let t = -self.label * dot(&self.a, x);
        // d/ds log(1 + exp(-y s)) = -y sigma(-y s)
        let sig = if t >= 0.0 { 1.0 / (1.0 + (-t).exp()) } else { t.exp() / (1.0 + t.exp()) };
        -self.label * sig
    }
}

impl SmoothFn for Logistic {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let t = -self.label * dot(&self.a, x);
        let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
        softplus + 0.5 * self.ridge * dot(x, x)
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let s = self.margin_derivative(x);
        for ((o, a), xv) in out.iter_mut().zip(&self.a).zip(x) {
            *o = s * a + self.ridge * xv;
        }
    }

    fn lipschitz(&self) -> f64 {
        0.25 * self.label * self.label * dot(&self.a, &self.a) + self.ridge
    }

    fn strong_convexity(&self) -> f64 {
        self.ridge
    }

    fn block_lipschitz(&self, layout: &BlockLayout) -> Vec<f64> {
        (0..layout.m())
            .map(|j| {
                let a = &self.a[layout.range(j)];
                0.25 * self.label * self.label * dot(a, a) + self.ridge
            })
            .collect()
    }

    fn zero_blocks(&self, layout: &BlockLayout) -> Vec<bool> {
        (0..layout.m())
            .map(|j| self.ridge == 0.0 && self.a[layout.range(j)].iter().all(|v| *v == 0.0))
            .collect()
    }
}

/// Centered finite-difference gradient with step `1e-6 (1 + ||x||_inf)`.
pub fn finite_difference_grad(f: &dyn SmoothFn, x: &[f64]) -> Vec<f64> {
    let h = 1e-6 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f.value(&probe);
            probe[i] = x[i] - h;
            let down = f.value(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `f(x) = sum_l w_l f_l(x)` with nonnegative weights.
#[derive(Debug, Clone)]
pub struct SumFn {
    terms: Vec<(f64, std::sync::Arc<dyn SmoothFn>)>,
}

impl SumFn {
    pub fn new(terms: Vec<(f64, std::sync::Arc<dyn SmoothFn>)>) -> Result<Self> {
        let d = terms.first().map(|t| t.1.dim()).ok_or_else(|| Error::Config("empty sum".into()))?;
        if terms.iter().any(|(w, f)| f.dim() != d || !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("sum terms need one dimension and nonnegative weights".into()));
        }
        Ok(Self { terms })
    }
}

impl SmoothFn for SumFn {
    fn dim(&self) -> usize {
        self.terms[0].1.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(w, f)| w * f.value(x)).sum()
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut g = vec![0.0; out.len()];
        for (w, f) in &self.terms {
            f.grad(x, &mut g);
            out.iter_mut().zip(&g).for_each(|(o, v)| *o += w * v);
        }
    }

    fn lipschitz(&self) -> f64 {
        self.terms.iter().map(|(w, f)| w * f.lipschitz()).sum()
    }

    fn strong_convexity(&self) -> f64 {
        self.terms.iter().map(|(w, f)| w * f.strong_convexity()).sum()
    }

    fn block_lipschitz(&self, layout: &BlockLayout) -> Vec<f64> {
        let mut out = vec![0.0; layout.m()];
        for (w, f) in &self.terms {
            out.iter_mut().zip(f.block_lipschitz(layout)).for_each(|(o, v)| *o += w * v);
        }
        out
    }

    fn zero_blocks(&self, layout: &BlockLayout) -> Vec<bool> {
        let mut out = vec![true; layout.m()];
        for (_, f) in &self.terms {
            out.iter_mut().zip(f.zero_blocks(layout)).for_each(|(o, z)| *o &= z);
        }
        out
    }
}
