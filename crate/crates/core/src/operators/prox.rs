//! Closed-form proximal maps of the shipped nonsmooth terms.

use serde::{Deserialize, Serialize};

use crate::blockspace::dot;
use crate::error::{Error, Result};

/// Proper closed convex functions with implementable prox.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProxFn {
    Zero,
    /// `w ||x||_1`
    L1 { weight: f64 },
    /// `w ||x||^2 / 2`
    SqL2 { weight: f64 },
    /// `w ||x - center||^2 / 2`
    SqDist { weight: f64, center: Vec<f64> },
    /// Indicator of `lo <= x <= hi`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Indicator of `<a, x> = b`.
    Hyperplane { a: Vec<f64>, b: f64 },
    /// Indicator of `<a, x> <= b`.
    Halfspace { a: Vec<f64>, b: f64 },
    /// Indicator of `||x - center|| <= radius`.
    Ball { center: Vec<f64>, radius: f64 },
    /// Fenchel conjugate, evaluated through the Moreau identity.
    Conjugate { inner: Box<ProxFn> },
}

impl ProxFn {
    pub fn conjugate(self) -> ProxFn {
        ProxFn::Conjugate { inner: Box::new(self) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        match self {
            ProxFn::Zero => Ok(()),
            ProxFn::L1 { weight } | ProxFn::SqL2 { weight } | ProxFn::SqDist { weight, .. } => {
                if weight.is_finite() && *weight >= 0.0 {
                    Ok(())
                } else {
                    bad("prox weight must be finite and nonnegative")
                }
            }
            ProxFn::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    bad("box needs lo <= hi componentwise")
                } else {
                    Ok(())
                }
            }
            ProxFn::Hyperplane { a, .. } | ProxFn::Halfspace { a, .. } => {
                if dot(a, a) > 0.0 {
                    Ok(())
                } else {
                    bad("hyperplane normal must be nonzero")
                }
            }
            ProxFn::Ball { radius, .. } => {
                if *radius >= 0.0 {
                    Ok(())
                } else {
                    bad("ball radius must be nonnegative")
                }
            }
            ProxFn::Conjugate { inner } => inner.validate(),
        }
    }

    /// Fixed dimension, if the function carries one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ProxFn::Zero | ProxFn::L1 { .. } | ProxFn::SqL2 { .. } => None,
            ProxFn::SqDist { center, .. } | ProxFn::Ball { center, .. } => Some(center.len()),
            ProxFn::Box { lo, .. } => Some(lo.len()),
            ProxFn::Hyperplane { a, .. } | ProxFn::Halfspace { a, .. } => Some(a.len()),
            ProxFn::Conjugate { inner } => inner.dim(),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        match self.dim() {
            Some(d) if d != n => Err(Error::Dimension(format!("prox term of dim {d} applied to {n}"))),
            _ => Ok(()),
        }
    }

    pub fn is_indicator(&self) -> bool {
        matches!(
            self,
            ProxFn::Box { .. } | ProxFn::Hyperplane { .. } | ProxFn::Halfspace { .. } | ProxFn::Ball { .. }
        )
    }

    /// Strong convexity modulus (0 when not strongly convex).
    pub fn strong_convexity(&self) -> f64 {
        match self {
            ProxFn::SqL2 { weight } | ProxFn::SqDist { weight, .. } => *weight,
            ProxFn::Conjugate { inner } => match inner.as_ref() {
                ProxFn::SqL2 { weight } | ProxFn::SqDist { weight, .. } if *weight > 0.0 => 1.0 / weight,
                _ => 0.0,
            },
            _ => 0.0,
        }
    }

    /// `prox_{gamma g}(x) = argmin_z g(z) + ||z - x||^2 / (2 gamma)`
    pub fn prox(&self, gamma: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("prox step {gamma} must be positive")));
        }
        self.check_dim(x.len())?;
        match self {
            ProxFn::Zero => out.copy_from_slice(x),
            ProxFn::L1 { weight } => {
                let t = gamma * weight;
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v.signum() * (v.abs() - t).max(0.0);
                }
            }
            ProxFn::SqL2 { weight } => {
                let s = 1.0 / (1.0 + gamma * weight);
                for (o, v) in out.iter_mut().zip(x) {
                    *o = s * v;
                }
            }
            ProxFn::SqDist { weight, center } => {
                let s = 1.0 / (1.0 + gamma * weight);
                for ((o, v), c) in out.iter_mut().zip(x).zip(center) {
                    *o = s * (v + gamma * weight * c);
                }
            }
            ProxFn::Box { lo, hi } => {
                for (((o, v), l), h) in out.iter_mut().zip(x).zip(lo).zip(hi) {
                    *o = v.clamp(*l, *h);
                }
            }
            ProxFn::Hyperplane { a, b } => {
                let t = (dot(a, x) - b) / dot(a, a);
                for ((o, v), ai) in out.iter_mut().zip(x).zip(a) {
                    *o = v - t * ai;
                }
            }
            ProxFn::Halfspace { a, b } => {
                let t = ((dot(a, x) - b) / dot(a, a)).max(0.0);
                for ((o, v), ai) in out.iter_mut().zip(x).zip(a) {
                    *o = v - t * ai;
                }
            }
            ProxFn::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(v, c)| (v - c) * (v - c)).sum();
                let d = d2.sqrt();
                let s = if d > *radius { radius / d } else { 1.0 };
                for ((o, v), c) in out.iter_mut().zip(x).zip(center) {
                    *o = c + s * (v - c);
                }
            }
            ProxFn::Conjugate { inner } => {
                // prox_{gamma g*}(x) = x - gamma prox_{g/gamma}(x/gamma)
                let scaled: Vec<f64> = x.iter().map(|v| v / gamma).collect();
                inner.prox(1.0 / gamma, &scaled, out)?;
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v - gamma * *o;
                }
            }
        }
        Ok(())
    }

    /// Function value; indicators return `+inf` outside their set (tolerance 1e-9).
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let tol = 1e-9;
        let ind = |inside: bool| if inside { 0.0 } else { f64::INFINITY };
        Ok(match self {
            ProxFn::Zero => 0.0,
            ProxFn::L1 { weight } => weight * x.iter().map(|v| v.abs()).sum::<f64>(),
            ProxFn::SqL2 { weight } => 0.5 * weight * dot(x, x),
            ProxFn::SqDist { weight, center } => {
                0.5 * weight * x.iter().zip(center).map(|(v, c)| (v - c) * (v - c)).sum::<f64>()
            }
            ProxFn::Box { lo, hi } => {
                ind(x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *v >= l - tol && *v <= h + tol))
            }
            ProxFn::Hyperplane { a, b } => ind((dot(a, x) - b).abs() <= tol * (1.0 + b.abs())),
            ProxFn::Halfspace { a, b } => ind(dot(a, x) - b <= tol * (1.0 + b.abs())),
            ProxFn::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(v, c)| (v - c) * (v - c)).sum();
                ind(d2.sqrt() <= radius + tol)
            }
            ProxFn::Conjugate { inner } => match inner.as_ref() {
                ProxFn::Zero => ind(x.iter().all(|v| v.abs() <= tol)),
                ProxFn::L1 { weight } => ind(x.iter().all(|v| v.abs() <= weight + tol)),
                ProxFn::SqL2 { weight } if *weight > 0.0 => 0.5 * dot(x, x) / weight,
                ProxFn::SqDist { weight, center } if *weight > 0.0 => {
                    dot(center, x) + 0.5 * dot(x, x) / weight
                }
                ProxFn::Box { lo, hi } => {
                    x.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| (l * v).max(h * v)).sum()
                }
                other => {
                    return Err(Error::Capability(format!("conjugate value of {other:?}")));
                }
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold() {
        let mut out = [0.0; 2];
        ProxFn::L1 { weight: 1.0 }.prox(1.0, &[2.0, -0.5], &mut out).unwrap();
        assert_eq!(out, [1.0, 0.0]);
    }

    #[test]
    fn conjugate_of_l1_is_clip() {
        let mut out = [0.0; 3];
        ProxFn::L1 { weight: 0.5 }.conjugate().prox(2.0, &[1.0, -0.2, -3.0], &mut out).unwrap();
        for (o, e) in out.iter().zip([0.5, -0.2, -0.5]) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_checked() {
        let mut out = [0.0; 2];
        let b = ProxFn::Box { lo: vec![0.0; 3], hi: vec![1.0; 3] };
        assert!(b.prox(1.0, &[1.0, 2.0], &mut out).is_err());
    }
}
