//! Block-structured vectors and the norms placed on them.
//!
//! A point of `H = H_1 x ... x H_m` is stored as one contiguous `Vec<f64>`
//! sliced by a [`BlockLayout`]. Metrics decide the inner product on the whole
//! space; each block always carries its Euclidean norm.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_finite, Error, Result};

/// Block dimensions of a product space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Dimension("layout needs at least one block".into()));
        }
        if let Some(j) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Dimension(format!("block {j} has dimension 0")));
        }
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        offsets.push(0);
        for d in &dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        Ok(Self { dims, offsets })
    }

    /// `m` blocks of equal dimension `d`.
    pub fn uniform(m: usize, d: usize) -> Result<Self> {
        Self::new(vec![d; m])
    }

    pub fn single(d: usize) -> Result<Self> {
        Self::new(vec![d])
    }

    pub fn m(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, j: usize) -> usize {
        self.dims[j]
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, j: usize) -> Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn check_block(&self, j: usize) -> Result<()> {
        if j < self.m() {
            Ok(())
        } else {
            Err(Error::Index(format!("block {j} of {}", self.m())))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayoutRepr {
    dims: Vec<usize>,
}

impl Serialize for BlockLayout {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LayoutRepr { dims: self.dims.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BlockLayout {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = LayoutRepr::deserialize(d)?;
        BlockLayout::new(repr.dims).map_err(serde::de::Error::custom)
    }
}

/// A finite point of a block space.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    layout: Arc<BlockLayout>,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn new(layout: Arc<BlockLayout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(Error::Dimension(format!(
                "data length {} vs layout total {}",
                data.len(),
                layout.total()
            )));
        }
        check_finite("block vector", &data)?;
        Ok(Self { layout, data })
    }

    pub fn zeros(layout: Arc<BlockLayout>) -> Self {
        let data = vec![0.0; layout.total()];
        Self { layout, data }
    }

    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Result<Self> {
        let layout = Arc::new(BlockLayout::new(blocks.iter().map(Vec::len).collect())?);
        Self::new(layout, blocks.concat())
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, j: usize) -> &[f64] {
        &self.data[self.layout.range(j)]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.layout.m()).map(move |j| self.block(j))
    }

    /// Overwrites block `j`, rejecting non-finite input.
    pub fn set_block(&mut self, j: usize, values: &[f64]) -> Result<()> {
        self.layout.check_block(j)?;
        if values.len() != self.layout.dim(j) {
            return Err(Error::Dimension(format!("block {j} expects {}", self.layout.dim(j))));
        }
        check_finite("block", values)?;
        let r = self.layout.range(j);
        self.data[r].copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn block_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.layout.range(j);
        &mut self.data[r]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Builds a vector sharing this layout; `data` must be finite.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.layout.clone(), data)
    }

    /// Euclidean norm squared of block `j`.
    pub fn block_norm_sq(&self, j: usize) -> Result<f64> {
        self.layout.check_block(j)?;
        Ok(dot(self.block(j), self.block(j)))
    }

    pub fn same_layout(&self, other: &BlockVector) -> Result<()> {
        if self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "layouts {:?} and {:?} differ",
                self.layout.dims(),
                other.layout.dims()
            )))
        }
    }

    pub fn sub(&self, other: &BlockVector) -> Result<BlockVector> {
        self.same_layout(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        self.with_data(data)
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &BlockVector) -> Result<BlockVector> {
        self.same_layout(other)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x + a * y).collect();
        self.with_data(data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

#[derive(Serialize, Deserialize)]
struct VectorRepr {
    blocks: Vec<Vec<f64>>,
}

impl Serialize for BlockVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VectorRepr { blocks: self.blocks().map(<[f64]>::to_vec).collect() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BlockVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = VectorRepr::deserialize(d)?;
        BlockVector::from_blocks(repr.blocks).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-block sandwich constants `M_lo_j ||x_j||^2 <= ||x||^2 <= M_hi_j ...` summed over `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceConstants {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl EquivalenceConstants {
    pub fn min_upper(&self) -> f64 {
        self.upper.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Symmetric positive-definite Gram matrix metric `<x, y> = x^T P y`.
#[derive(Debug, Clone)]
pub struct GramMetric {
    p: DMatrix<f64>,
    factor: DMatrix<f64>,
    eig_min: f64,
    eig_max: f64,
    constants: Option<EquivalenceConstants>,
}

impl GramMetric {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::Dimension("Gram matrix must be square".into()));
        }
        check_finite("Gram matrix", p.as_slice())?;
        let scale = p.amax().max(1.0);
        let asym = (&p - p.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::Spectral(format!("asymmetry {asym:e}")));
        }
        let sym = (&p + p.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let eig_min = eig.eigenvalues.min();
        let eig_max = eig.eigenvalues.max();
        if eig_min <= 0.0 {
            return Err(Error::Spectral(format!("smallest eigenvalue {eig_min:e}")));
        }
        let chol = sym
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Spectral("Cholesky factorization failed".into()))?;
        Ok(Self { p: sym, factor: chol.l(), eig_min, eig_max, constants: None })
    }

    /// Installs closed-form sandwich constants after checking them spectrally:
    /// `P - diag(lower)` and `diag(upper) - P` must both be positive semidefinite.
    pub fn with_constants(mut self, layout: &BlockLayout, c: EquivalenceConstants) -> Result<Self> {
        if layout.total() != self.p.nrows() || c.lower.len() != layout.m() || c.upper.len() != layout.m() {
            return Err(Error::Dimension("constants do not match layout".into()));
        }
        if c.lower.iter().chain(&c.upper).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Spectral("sandwich constants must be positive".into()));
        }
        let diag = |w: &[f64]| {
            let mut d = DVector::zeros(layout.total());
            for (j, wj) in w.iter().enumerate() {
                for r in layout.range(j) {
                    d[r] = *wj;
                }
            }
            DMatrix::from_diagonal(&d)
        };
        let tol = 1e-10 * self.eig_max.max(1.0);
        let lo = (&self.p - diag(&c.lower)).symmetric_eigen().eigenvalues.min();
        let hi = (diag(&c.upper) - &self.p).symmetric_eigen().eigenvalues.min();
        if lo < -tol || hi < -tol {
            return Err(Error::Spectral(format!(
                "sandwich constants invalid (margins {lo:e}, {hi:e})"
            )));
        }
        self.constants = Some(c);
        Ok(self)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Lower Cholesky factor `L` with `P = L L^T`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn eigen_bounds(&self) -> (f64, f64) {
        (self.eig_min, self.eig_max)
    }
}

/// The inner product placed on the whole space.
#[derive(Debug, Clone)]
pub enum Metric {
    Product,
    /// `||x||^2 = sum_j w_j ||x_j||^2`
    BlockWeighted(Vec<f64>),
    GramP(GramMetric),
}

impl Metric {
    pub fn block_weighted(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Spectral("block weights must be positive".into()));
        }
        Ok(Metric::BlockWeighted(weights))
    }

    pub fn gram(p: DMatrix<f64>) -> Result<Self> {
        GramMetric::new(p).map(Metric::GramP)
    }

    pub fn check_layout(&self, layout: &BlockLayout) -> Result<()> {
        match self {
            Metric::Product => Ok(()),
            Metric::BlockWeighted(w) if w.len() == layout.m() => Ok(()),
            Metric::BlockWeighted(w) => {
                Err(Error::Dimension(format!("{} weights for {} blocks", w.len(), layout.m())))
            }
            Metric::GramP(g) if g.p.nrows() == layout.total() => Ok(()),
            Metric::GramP(g) => Err(Error::Dimension(format!(
                "Gram matrix of size {} for total dimension {}",
                g.p.nrows(),
                layout.total()
            ))),
        }
    }

    pub fn inner(&self, x: &BlockVector, y: &BlockVector) -> Result<f64> {
        x.same_layout(y)?;
        self.check_layout(x.layout())?;
        Ok(self.inner_raw(x.layout(), x.as_slice(), y.as_slice()))
    }

    /// Inner product on raw slices already known to match `layout`.
    pub(crate) fn inner_raw(&self, layout: &BlockLayout, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Metric::Product => dot(x, y),
            Metric::BlockWeighted(w) => (0..layout.m())
                .map(|j| {
                    let r = layout.range(j);
                    w[j] * dot(&x[r.clone()], &y[r])
                })
                .sum(),
            Metric::GramP(g) => {
                let n = layout.total();
                let mut acc = 0.0;
                for c in 0..n {
                    if y[c] != 0.0 {
                        acc += y[c] * dot(g.p.column(c).as_slice(), x);
                    }
                }
                acc
            }
        }
    }

    pub fn norm_sq(&self, x: &BlockVector) -> Result<f64> {
        self.check_layout(x.layout())?;
        Ok(match self {
            Metric::GramP(g) => {
                let v = DVector::from_column_slice(x.as_slice());
                (g.factor.transpose() * v).norm_squared()
            }
            _ => self.inner_raw(x.layout(), x.as_slice(), x.as_slice()),
        })
    }

    pub fn norm(&self, x: &BlockVector) -> Result<f64> {
        self.norm_sq(x).map(f64::sqrt)
    }

    pub fn equivalence_constants(&self, layout: &BlockLayout) -> Result<EquivalenceConstants> {
        self.check_layout(layout)?;
        let m = layout.m();
        Ok(match self {
            Metric::Product => EquivalenceConstants { lower: vec![1.0; m], upper: vec![1.0; m] },
            Metric::BlockWeighted(w) => EquivalenceConstants { lower: w.clone(), upper: w.clone() },
            Metric::GramP(g) => match &g.constants {
                Some(c) => c.clone(),
                None => {
                    EquivalenceConstants { lower: vec![g.eig_min; m], upper: vec![g.eig_max; m] }
                }
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_rejects_empty_and_zero_dims() {
        assert!(BlockLayout::new(vec![]).is_err());
        assert!(BlockLayout::new(vec![2, 0]).is_err());
    }

    #[test]
    fn vector_rejects_nan() {
        let l = Arc::new(BlockLayout::new(vec![2]).unwrap());
        assert!(matches!(BlockVector::new(l, vec![1.0, f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn gram_rejects_indefinite() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(Metric::gram(p), Err(Error::Spectral(_))));
    }

    #[test]
    fn bad_constants_are_rejected() {
        let l = BlockLayout::new(vec![1, 1]).unwrap();
        let g = GramMetric::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let c = EquivalenceConstants { lower: vec![1.5, 1.5], upper: vec![3.0, 3.0] };
        assert!(g.with_constants(&l, c).is_err());
    }
}
