//! Maximal monotone operators with computable resolvents, and Lipschitz maps.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::prox::ProxFn;
use super::smooth::SmoothFn;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum MonotoneOp {
    Zero,
    /// Subdifferential of a prox-friendly function.
    Subdiff(ProxFn),
    /// Normal cone of the set encoded by an indicator `ProxFn`.
    NormalCone(ProxFn),
    /// `A x = M x + v` with `M + M^T` positive semidefinite.
    Affine { m: DMatrix<f64>, v: DVector<f64> },
    /// Block-diagonal product acting on consecutive coordinate ranges.
    Product(Vec<(usize, MonotoneOp)>),
}

impl MonotoneOp {
    /// Strong monotonicity modulus.
    pub fn strong_monotonicity(&self) -> f64 {
        match self {
            MonotoneOp::Zero | MonotoneOp::NormalCone(_) => 0.0,
            MonotoneOp::Subdiff(g) => g.strong_convexity(),
            MonotoneOp::Affine { m, .. } => {
                let s = (m + m.transpose()) * 0.5;
                s.symmetric_eigen().eigenvalues.min().max(0.0)
            }
            MonotoneOp::Product(parts) => {
                parts.iter().map(|(_, a)| a.strong_monotonicity()).fold(f64::INFINITY, f64::min)
            }
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            MonotoneOp::Zero => None,
            MonotoneOp::Subdiff(g) | MonotoneOp::NormalCone(g) => g.dim(),
            MonotoneOp::Affine { v, .. } => Some(v.len()),
            MonotoneOp::Product(parts) => Some(parts.iter().map(|(d, _)| d).sum()),
        }
    }
}

/// `J_{gamma A} = (I + gamma A)^{-1}`, precomputed for a fixed `gamma`.
#[derive(Debug, Clone)]
pub struct Resolvent {
    gamma: f64,
    kind: ResolventKind,
}

#[derive(Debug, Clone)]
enum ResolventKind {
    Identity,
    Prox(ProxFn),
    Linear { inv: DMatrix<f64>, shift: DVector<f64> },
    Product(Vec<(usize, Resolvent)>),
}

/// Builds the resolvent of `a` with step `gamma`.
pub fn resolvent_op(a: &MonotoneOp, gamma: f64) -> Result<Resolvent> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("resolvent step {gamma} must be positive")));
    }
    let kind = match a {
        MonotoneOp::Zero => ResolventKind::Identity,
        MonotoneOp::Subdiff(g) => {
            g.validate()?;
            ResolventKind::Prox(g.clone())
        }
        MonotoneOp::NormalCone(g) => {
            if !g.is_indicator() {
                return Err(Error::Capability(format!("normal cone of non-indicator {g:?}")));
            }
            ResolventKind::Prox(g.clone())
        }
        MonotoneOp::Affine { m, v } => {
            if !m.is_square() || m.nrows() != v.len() {
                return Err(Error::Dimension("affine monotone operator shape".into()));
            }
            let d = v.len();
            let sys = DMatrix::identity(d, d) + m * gamma;
            let inv = sys
                .try_inverse()
                .ok_or_else(|| Error::Numerical("I + gamma M is singular".into()))?;
            let shift = -(&inv * v) * gamma;
            ResolventKind::Linear { inv, shift }
        }
        MonotoneOp::Product(parts) => ResolventKind::Product(
            parts
                .iter()
                .map(|(d, p)| match p.dim() {
                    Some(pd) if pd != *d => Err(Error::Dimension("product part dimension".into())),
                    _ => resolvent_op(p, gamma).map(|r| (*d, r)),
                })
                .collect::<Result<_>>()?,
        ),
    };
    Ok(Resolvent { gamma, kind })
}

impl Resolvent {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.kind {
            ResolventKind::Identity => out.copy_from_slice(x),
            ResolventKind::Prox(g) => g.prox(self.gamma, x, out)?,
            ResolventKind::Linear { inv, shift } => {
                if x.len() != shift.len() {
                    return Err(Error::Dimension("resolvent input".into()));
                }
                for (r, o) in out.iter_mut().enumerate() {
                    *o = shift[r] + inv.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            ResolventKind::Product(parts) => {
                let total: usize = parts.iter().map(|(d, _)| d).sum();
                if total != x.len() {
                    return Err(Error::Dimension("product resolvent input".into()));
                }
                let mut off = 0;
                for (d, r) in parts {
                    r.apply(&x[off..off + d], &mut out[off..off + d])?;
                    off += d;
                }
            }
        }
        Ok(())
    }
}

/// A single-valued Lipschitz map `B : R^d -> R^d`.
pub trait LipschitzMap: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn lipschitz(&self) -> f64;
}

/// `B x = M x + v`
#[derive(Debug, Clone)]
pub struct AffineMap {
    m: DMatrix<f64>,
    v: DVector<f64>,
    lip: f64,
}

impl AffineMap {
    pub fn new(m: DMatrix<f64>, v: DVector<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() != v.len() {
            return Err(Error::Dimension("affine map shape".into()));
        }
        let lip = m.clone().singular_values().max();
        Ok(Self { m, v, lip })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.v
    }
}

impl LipschitzMap for AffineMap {
    fn dim(&self) -> usize {
        self.v.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.v[r] + self.m.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn lipschitz(&self) -> f64 {
        self.lip
    }
}

/// Gradient of a smooth function viewed as a Lipschitz map.
#[derive(Debug, Clone)]
pub struct GradientMap(pub Arc<dyn SmoothFn>);

impl LipschitzMap for GradientMap {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.0.grad(x, out)
    }

    fn lipschitz(&self) -> f64 {
        self.0.lipschitz()
    }
}
