//! Convex constraint functions `f(x) <= 0` with a deterministic subgradient selector.

use serde::{Deserialize, Serialize};

use crate::blockspace::dot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexFn {
    /// `<a, x> - b`
    Affine { a: Vec<f64>, b: f64 },
    /// `||x - center|| - radius`
    BallExcess { center: Vec<f64>, radius: f64 },
    /// `max_l <a_l, x> - b_l`
    MaxAffine { rows: Vec<Vec<f64>>, b: Vec<f64> },
}

impl ConvexFn {
    pub fn dim(&self) -> usize {
        match self {
            ConvexFn::Affine { a, .. } => a.len(),
            ConvexFn::BallExcess { center, .. } => center.len(),
            ConvexFn::MaxAffine { rows, .. } => rows.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConvexFn::MaxAffine { rows, b } => {
                if rows.is_empty() || rows.len() != b.len() {
                    return Err(Error::Config("max-affine needs one offset per row".into()));
                }
                let d = rows[0].len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(Error::Dimension("max-affine rows differ in length".into()));
                }
                Ok(())
            }
            ConvexFn::BallExcess { radius, .. } if *radius < 0.0 => {
                Err(Error::Config("ball radius must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ConvexFn::Affine { a, b } => dot(a, x) - b,
            ConvexFn::BallExcess { center, radius } => {
                x.iter().zip(center).map(|(v, c)| (v - c) * (v - c)).sum::<f64>().sqrt() - radius
            }
            ConvexFn::MaxAffine { rows, b } => rows
                .iter()
                .zip(b)
                .map(|(r, bi)| dot(r, x) - bi)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Subgradient at `x`. For `MaxAffine` the lexicographically smallest row among
    /// the active pieces is returned.
    pub fn subgradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ConvexFn::Affine { a, .. } => out.copy_from_slice(a),
            ConvexFn::BallExcess { center, .. } => {
                let d: Vec<f64> = x.iter().zip(center).map(|(v, c)| v - c).collect();
                let n = dot(&d, &d).sqrt();
                if n > 0.0 {
                    for (o, v) in out.iter_mut().zip(&d) {
                        *o = v / n;
                    }
                } else {
                    out.iter_mut().for_each(|o| *o = 0.0);
                }
            }
            ConvexFn::MaxAffine { rows, b } => {
                let fmax = self.value(x);
                let best = rows
                    .iter()
                    .zip(b)
                    .filter(|(r, bi)| dot(r, x) - *bi == fmax)
                    .map(|(r, _)| r)
                    .min_by(|p, q| {
                        p.iter()
                            .zip(q.iter())
                            .map(|(u, v)| u.total_cmp(v))
                            .find(|o| o.is_ne())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .expect("max-affine has at least one row");
                out.copy_from_slice(best);
            }
        }
    }

    /// Upper bound on subgradient norms.
    pub fn subgradient_bound(&self) -> f64 {
        match self {
            ConvexFn::Affine { a, .. } => dot(a, a).sqrt(),
            ConvexFn::BallExcess { .. } => 1.0,
            ConvexFn::MaxAffine { rows, .. } => {
                rows.iter().map(|r| dot(r, r).sqrt()).fold(0.0, f64::max)
            }
        }
    }
}

/// Value of `x - G_f(x)` for the subgradient projector `G_f`.
pub fn subgradient_step(f: &ConvexFn, x: &[f64], out: &mut [f64]) -> Result<()> {
    let v = f.value(x);
    if v <= 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return Ok(());
    }
    f.subgradient(x, out);
    let g2 = dot(out, out);
    if g2 == 0.0 {
        return Err(Error::Degenerate(format!("zero subgradient where f = {v:e} > 0")));
    }
    let s = v / g2;
    out.iter_mut().for_each(|o| *o *= s);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicographic_selector() {
        let f = ConvexFn::MaxAffine { rows: vec![vec![1.0, 0.0], vec![0.0, 1.0]], b: vec![0.0, 0.0] };
        let mut g = [0.0; 2];
        f.subgradient(&[1.0, 1.0], &mut g);
        assert_eq!(g, [0.0, 1.0]);
    }

    #[test]
    fn degenerate_zero_subgradient() {
        let f = ConvexFn::Affine { a: vec![0.0, 0.0], b: -1.0 };
        let mut out = [0.0; 2];
        assert!(matches!(subgradient_step(&f, &[0.0, 0.0], &mut out), Err(Error::Degenerate(_))));
    }
}
