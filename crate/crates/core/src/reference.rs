//! Hand-written reference iterations for the classic presets on ridge data.
//!
//! Each oracle replays the engine's draws on an identically seeded sampling stream
//! and applies the textbook update with dense linear algebra.

use nalgebra::{DMatrix, DVector};

use crate::presets::PresetBundle;
use crate::problems::{Problem, Rows};
use crate::rng::{stream, Stream};
use crate::sampling::Draw;

pub fn matrix(rows: &Rows) -> DMatrix<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

pub struct Ridge {
    pub problem: Problem,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub k: DMatrix<f64>,
}

impl Ridge {
    /// Dense view of a ridge problem; `None` for other kinds.
    pub fn from_problem(problem: Problem) -> Option<Self> {
        let Problem::Ridge { a, b, k, .. } = &problem else { return None };
        let (a, b, k) = (matrix(a), DVector::from_column_slice(b), matrix(k));
        Some(Self { problem, a, b, k })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// `a_i (a_i^T x - b_i) + K x`
    pub fn grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let ai = self.a.row(i).transpose();
        &ai * (ai.dot(x) - self.b[i]) + &self.k * x
    }

    pub fn lipschitz(&self) -> f64 {
        (0..self.n())
            .map(|i| {
                let ai = self.a.row(i).transpose();
                (&ai * ai.transpose() + &self.k).symmetric_eigenvalues().max()
            })
            .fold(0.0, f64::max)
    }

    pub fn strong_convexity(&self) -> f64 {
        let n = self.n() as f64;
        (self.a.transpose() * &self.a / n + &self.k).symmetric_eigenvalues().min()
    }
}

/// Draws of the bundle's law on the engine's sampling stream.
pub fn draws(bundle: &PresetBundle, seed: u64, steps: usize) -> Vec<Draw> {
    let mut rng = stream(seed, Stream::Sampling);
    (0..steps).map(|_| bundle.law.draw(&mut rng)).collect()
}

/// Engine iterates `x^1..x^steps`.
pub fn engine_iterates(bundle: &PresetBundle, seed: u64, steps: usize) -> crate::Result<Vec<Vec<f64>>> {
    let (smart, mut state) = bundle.start(seed)?;
    (0..steps)
        .map(|_| {
            smart.step(&mut state)?;
            Ok(state.x.as_slice().to_vec())
        })
        .collect()
}

/// Largest coordinate difference between two iterate sequences; infinite when their lengths differ.
pub fn max_deviation(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .flat_map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn lambda(bundle: &PresetBundle, k: u64) -> f64 {
    bundle.steps.at(k)
}

fn column(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// `x <- x - lambda (g_i(x) - y_i + mean y)`, `y_i <- g_i(x)`, starting from `y_i = g_i(x^0)`.
pub fn saga_oracle(p: &Ridge, bundle: &PresetBundle, seed: u64, steps: usize) -> Vec<Vec<f64>> {
    let n = p.n();
    let mut x = column(bundle.x0.as_slice());
    let mut y: Vec<DVector<f64>> = (0..n).map(|i| p.grad(i, &x)).collect();
    let mut out = Vec::with_capacity(steps);
    for (k, d) in draws(bundle, seed, steps).into_iter().enumerate() {
        let mean = y.iter().fold(DVector::zeros(x.len()), |acc, v| acc + v) / n as f64;
        let g = p.grad(d.i, &x);
        x = &x - (&g - &y[d.i] + mean) * lambda(bundle, k as u64);
        y[d.i] = g;
        out.push(x.iter().copied().collect());
    }
    out
}

/// SAGA primal step; every `y_i` refreshed at `x^k` when `eps_k = 1`.
pub fn svrg_avg_oracle(p: &Ridge, bundle: &PresetBundle, seed: u64, steps: usize) -> Vec<Vec<f64>> {
    let n = p.n();
    let mut x = column(bundle.x0.as_slice());
    let mut y: Vec<DVector<f64>> = (0..n).map(|i| p.grad(i, &x)).collect();
    let mut out = Vec::with_capacity(steps);
    for (k, d) in draws(bundle, seed, steps).into_iter().enumerate() {
        let mean = y.iter().fold(DVector::zeros(x.len()), |acc, v| acc + v) / n as f64;
        let next = &x - (p.grad(d.i, &x) - &y[d.i] + mean) * lambda(bundle, k as u64);
        if d.eps {
            y = (0..n).map(|i| p.grad(i, &x)).collect();
        }
        x = next;
        out.push(x.iter().copied().collect());
    }
    out
}

/// Duals read with delay `e_k = k mod (tau + 1)`, where `y^{t} = g(x^{t-1})` and `y^0 = g(x^0)`.
pub fn svrg_sched_oracle(p: &Ridge, bundle: &PresetBundle, tau: u64, seed: u64, steps: usize) -> Vec<Vec<f64>> {
    let n = p.n();
    let mut xs = vec![column(bundle.x0.as_slice())];
    let mut out = Vec::with_capacity(steps);
    for (k, d) in draws(bundle, seed, steps).into_iter().enumerate() {
        let k = k as u64;
        let t = k - k % (tau + 1);
        let anchor = &xs[t.saturating_sub(1) as usize];
        let y: Vec<DVector<f64>> = (0..n).map(|i| p.grad(i, anchor)).collect();
        let mean = y.iter().fold(DVector::zeros(anchor.len()), |acc, v| acc + v) / n as f64;
        let x = &xs[k as usize];
        let next = x - (p.grad(d.i, x) - &y[d.i] + mean) * lambda(bundle, k);
        out.push(next.iter().copied().collect());
        xs.push(next);
    }
    out
}

/// `x_j <- (1 - lambda) x_j + (lambda / N) sum_l (x_l - gamma g_l(x_l))` for `j` in the draw.
pub fn finito_oracle(p: &Ridge, bundle: &PresetBundle, gamma: f64, seed: u64, steps: usize) -> Vec<Vec<f64>> {
    let (n, d) = (p.n(), p.a.ncols());
    let mut x: Vec<DVector<f64>> = (0..n).map(|j| column(&bundle.x0.as_slice()[j * d..(j + 1) * d])).collect();
    let mut out = Vec::with_capacity(steps);
    for (k, draw) in draws(bundle, seed, steps).into_iter().enumerate() {
        let lam = lambda(bundle, k as u64);
        let avg = (0..n).fold(DVector::zeros(d), |acc, l| acc + (&x[l] - p.grad(l, &x[l]) * gamma)) / n as f64;
        for &j in &draw.blocks {
            x[j] = &x[j] * (1.0 - lam) + &avg * lam;
        }
        out.push(x.iter().flat_map(|v| v.iter().copied()).collect());
    }
    out
}

/// `x_j <- x_j - lambda (x_j - prox_{s f_j^*(-.)}(x_j - sum_l x_l))` with least-squares rows
/// and `s = mu0 N`.
pub fn sdca_oracle(p: &Ridge, mu0: f64, bundle: &PresetBundle, seed: u64, steps: usize) -> Vec<Vec<f64>> {
    let (n, d) = (p.n(), p.a.ncols());
    let s = mu0 * n as f64;
    let mut x: Vec<DVector<f64>> = (0..n).map(|j| column(&bundle.x0.as_slice()[j * d..(j + 1) * d])).collect();
    let mut out = Vec::with_capacity(steps);
    for (k, draw) in draws(bundle, seed, steps).into_iter().enumerate() {
        let lam = lambda(bundle, k as u64);
        let total = x.iter().fold(DVector::zeros(d), |acc, v| acc + v);
        for &j in &draw.blocks {
            let aj = p.a.row(j).transpose();
            let v = &x[j] - &total;
            let w = -&v / s;
            let z = &w - &aj * ((aj.dot(&w) - p.b[j]) / (s + aj.norm_squared()));
            let prox = v + z * s;
            x[j] = &x[j] - (&x[j] - prox) * lam;
        }
        out.push(x.iter().flat_map(|v| v.iter().copied()).collect());
    }
    out
}

/// `x <- x - lambda (<a_i, x> - b_i) a_i` on normalized rows.
pub fn kaczmarz_oracle(a: &DMatrix<f64>, b: &DVector<f64>, bundle: &PresetBundle, seed: u64, steps: usize) -> Vec<Vec<f64>> {
    let mut x = column(bundle.x0.as_slice());
    let mut out = Vec::with_capacity(steps);
    for (k, d) in draws(bundle, seed, steps).into_iter().enumerate() {
        let row = a.row(d.i).transpose();
        let norm = row.norm();
        let (ai, bi) = (&row / norm, b[d.i] / norm);
        x = &x - &ai * ((ai.dot(&x) - bi) * lambda(bundle, k as u64));
        out.push(x.iter().copied().collect());
    }
    out
}
