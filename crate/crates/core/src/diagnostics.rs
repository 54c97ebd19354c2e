//! Residuals, distances to the solution set, rate fits and envelope tests.

use serde::{Deserialize, Serialize};

use crate::blockspace::BlockVector;
use crate::error::{Error, Result};
use crate::operators::OperatorFamily;

/// Minimum number of points behind a rate fit.
pub const MIN_FIT_POINTS: usize = 30;
/// Minimum number of seeds behind an envelope test.
pub const MIN_SEEDS: usize = 30;

/// `||S(x)||` in the family metric.
pub fn residual(family: &OperatorFamily, x: &BlockVector) -> Result<f64> {
    family.metric().norm(&family.aggregate(x)?)
}

/// Squared metric distance from `x` to the attached solution set, if one is attached.
pub fn dist_sq(family: &OperatorFamily, x: &BlockVector) -> Result<Option<f64>> {
    let Some(s) = family.solution() else { return Ok(None) };
    let p = s.project(x)?;
    family.metric().norm_sq(&x.sub(&p)?).map(Some)
}

/// Deterministic root search `x <- x - c S(x)` with `c = n min(beta) / max(M_hi)`.
///
/// Stops once `||S(x)|| <= tol`; fails with [`Error::Insufficient`] after `max_iters`.
pub fn find_root(family: &OperatorFamily, x0: &BlockVector, tol: f64, max_iters: u64) -> Result<BlockVector> {
    let c = root_step(family)?;
    let mut x = x0.clone();
    for _ in 0..max_iters {
        let s = family.aggregate(&x)?;
        if family.metric().norm(&s)? <= tol {
            return Ok(x);
        }
        x = x.axpy(-c, &s)?;
    }
    let r = residual(family, &x)?;
    if r <= tol {
        Ok(x)
    } else {
        Err(Error::Insufficient(format!("root search stalled at residual {r:e} after {max_iters} iterations")))
    }
}

fn root_step(family: &OperatorFamily) -> Result<f64> {
    let beta = family
        .beta()
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| !family.zero_block(i, *j)).map(|(_, b)| *b))
        .fold(f64::INFINITY, f64::min);
    let upper = family
        .metric()
        .equivalence_constants(family.layout())?
        .upper
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let c = family.n() as f64 * beta / upper;
    if c.is_finite() && c > 0.0 {
        Ok(c)
    } else {
        Err(Error::Degenerate(format!("root step {c}")))
    }
}

/// Log-linear least-squares fit `log v_k = log a + k log r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Per-iteration contraction factor `r`.
    pub factor: f64,
    /// Fitted value `a` at iteration 0.
    pub intercept: f64,
    /// First and last iteration used.
    pub window: (u64, u64),
    pub r_squared: f64,
    pub points: usize,
}

/// Fits a geometric rate to the positive entries of `(iters, values)`.
pub fn fit_rate(iters: &[u64], values: &[f64]) -> Result<RateFit> {
    if iters.len() != values.len() {
        return Err(Error::Dimension("iterations and values differ in length".into()));
    }
    let pts: Vec<(f64, f64, u64)> = iters
        .iter()
        .zip(values)
        .filter(|(_, v)| v.is_finite() && **v > 0.0)
        .map(|(k, v)| (*k as f64, v.ln(), *k))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::Insufficient(format!("rate fit needs {MIN_FIT_POINTS} points, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("rate fit over a single iteration".into()));
    }
    let slope = sxy / sxx;
    let a = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit {
        factor: slope.exp(),
        intercept: a.exp(),
        window: (pts[0].2, pts[pts.len() - 1].2),
        r_squared,
        points: pts.len(),
    })
}

/// Outcome of an envelope test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub pass: bool,
    /// Iteration with the largest ratio of mean to bound after burn-in.
    pub max_violation_iter: Option<u64>,
    pub max_ratio: f64,
    pub fitted_factor: Option<f64>,
    pub predicted_factor: f64,
    pub intercept: f64,
    pub seeds: usize,
    pub burn_in: u64,
}

/// Envelope test parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// Contraction per `period` iterations.
    pub factor: f64,
    pub period: u64,
    pub burn_in: u64,
    pub slack: f64,
}

impl Envelope {
    /// `factor^(k / period)`
    pub fn decay(&self, k: u64) -> f64 {
        self.factor.powf(k as f64 / self.period as f64)
    }
}

/// Mean over seeds of equally sampled traces.
pub fn mean_trace(traces: &[Vec<f64>]) -> Result<Vec<f64>> {
    let len = traces.first().map_or(0, Vec::len);
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::Dimension("traces differ in length".into()));
    }
    Ok((0..len).map(|k| traces.iter().map(|t| t[k]).sum::<f64>() / traces.len() as f64).collect())
}

/// Checks `mean_k <= decay(k) (d0 + c) (1 + slack)` for every sampled `k > burn_in`.
///
/// `traces[s][t]` is the squared distance of seed `s` at iteration `iters[t]`;
/// `iters[0]` must be 0. The intercept `c` is the smallest value that covers the burn-in prefix.
pub fn envelope_test(traces: &[Vec<f64>], iters: &[u64], env: Envelope) -> Result<EnvelopeReport> {
    if traces.len() < MIN_SEEDS {
        return Err(Error::Insufficient(format!("envelope test needs {MIN_SEEDS} seeds, got {}", traces.len())));
    }
    if iters.first() != Some(&0) {
        return Err(Error::Config("traces must start at iteration 0".into()));
    }
    if !(env.factor > 0.0 && env.factor <= 1.0) || env.period == 0 || env.slack < 0.0 {
        return Err(Error::Config(format!("envelope parameters {env:?}")));
    }
    let mean = mean_trace(traces)?;
    if mean.len() != iters.len() {
        return Err(Error::Dimension("trace length differs from iteration grid".into()));
    }
    let d0 = mean[0];
    let intercept = iters
        .iter()
        .zip(&mean)
        .take_while(|(k, _)| **k <= env.burn_in)
        .map(|(k, m)| m / env.decay(*k) - d0)
        .fold(0.0, f64::max);
    let mut worst: Option<(u64, f64)> = None;
    let mut pass = true;
    for (k, m) in iters.iter().zip(&mean).filter(|(k, _)| **k > env.burn_in) {
        let bound = env.decay(*k) * (d0 + intercept) * (1.0 + env.slack);
        let ratio = if bound > 0.0 { m / bound } else if *m > 0.0 { f64::INFINITY } else { 0.0 };
        if !(ratio <= 1.0) {
            pass = false;
        }
        if worst.is_none_or(|(_, r)| ratio > r) {
            worst = Some((*k, ratio));
        }
    }
    let tail: Vec<(u64, f64)> = iters
        .iter()
        .zip(&mean)
        .filter(|(k, m)| **k > env.burn_in && **m > 1e-280)
        .map(|(k, m)| (*k, *m))
        .collect();
    let (ti, tv): (Vec<u64>, Vec<f64>) = tail.into_iter().unzip();
    let fitted_factor = fit_rate(&ti, &tv).ok().map(|f| f.factor);
    Ok(EnvelopeReport {
        pass,
        max_violation_iter: worst.map(|w| w.0),
        max_ratio: worst.map_or(0.0, |w| w.1),
        fitted_factor,
        predicted_factor: env.decay(1),
        intercept,
        seeds: traces.len(),
        burn_in: env.burn_in,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_sequence_fit_is_exact() {
        let iters: Vec<u64> = (0..40).collect();
        let vals: Vec<f64> = iters.iter().map(|k| 3.0 * 0.9f64.powi(*k as i32)).collect();
        let fit = fit_rate(&iters, &vals).unwrap();
        assert!((fit.factor - 0.9).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-10);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(fit_rate(&[0, 1], &[1.0, 0.5]), Err(Error::Insufficient(_))));
    }

    #[test]
    fn constant_traces_pass_with_unit_factor() {
        let traces = vec![vec![1.0; 5]; 30];
        let env = Envelope { factor: 1.0, period: 1, burn_in: 0, slack: 0.0 };
        let r = envelope_test(&traces, &[0, 1, 2, 3, 4], env).unwrap();
        assert!(r.pass);
    }
}
