//! The random triple `(S_k, i_k, eps_k)` and trigger graphs.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::operators::OperatorFamily;

/// How the block set `S_k` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMode {
    /// Each block independently with probability `q_j`.
    IndependentBernoulli,
    /// Exactly one block, `P(j) = q_j`.
    SingleBlock,
    /// Uniform subset of fixed size.
    FixedSize(usize),
}

impl fmt::Display for BlockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockMode::IndependentBernoulli => write!(f, "independent-bernoulli"),
            BlockMode::SingleBlock => write!(f, "single-block"),
            BlockMode::FixedSize(k) => write!(f, "fixed-size-{k}"),
        }
    }
}

impl std::str::FromStr for BlockMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent-bernoulli" => Ok(BlockMode::IndependentBernoulli),
            "single-block" => Ok(BlockMode::SingleBlock),
            other => other
                .strip_prefix("fixed-size-")
                .and_then(|k| k.parse().ok())
                .map(BlockMode::FixedSize)
                .ok_or_else(|| Error::Config(format!("unknown block mode {other:?}"))),
        }
    }
}

impl Serialize for BlockMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BlockMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// One draw of the sampling triple.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Draw {
    pub blocks: Vec<usize>,
    pub i: usize,
    pub eps: bool,
}

/// Joint law of the block set, operator index and dual coin.
#[derive(Debug, Clone)]
pub struct SamplingLaw {
    q: Vec<f64>,
    p: Vec<Vec<f64>>,
    rho: f64,
    mode: BlockMode,
    cum_p: Vec<Vec<f64>>,
    cum_q: Vec<f64>,
    column_constant: bool,
}

fn cumulative(w: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    w.map(|v| {
        acc += v;
        acc
    })
    .collect()
}

fn inverse_cdf(cum: &[f64], u: f64) -> usize {
    let total = *cum.last().unwrap();
    let t = u * total;
    cum.iter().position(|c| t < *c).unwrap_or(cum.len() - 1)
}

impl SamplingLaw {
    /// `q` has one entry per block, `p` is `n x m` with columns summing to one.
    pub fn new(q: Vec<f64>, p: Vec<Vec<f64>>, rho: f64, mode: BlockMode) -> Result<Self> {
        let m = q.len();
        if m == 0 || p.is_empty() {
            return Err(Error::Config("sampling law needs at least one block and operator".into()));
        }
        if let Some(j) = q.iter().position(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(Error::Config(format!("q[{j}] = {} outside (0, 1]", q[j])));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Config(format!("rho = {rho} outside (0, 1]")));
        }
        match mode {
            BlockMode::IndependentBernoulli => {}
            BlockMode::SingleBlock => {
                let s: f64 = q.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(Error::Config(format!("single-block q sums to {s}")));
                }
            }
            BlockMode::FixedSize(k) => {
                if k == 0 || k > m {
                    return Err(Error::Config(format!("fixed size {k} with {m} blocks")));
                }
                let target = k as f64 / m as f64;
                if q.iter().any(|v| (v - target).abs() > 1e-12) {
                    return Err(Error::Config(format!("fixed-size-{k} requires q = {target}")));
                }
            }
        }
        if p.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension(format!("p rows must have {m} columns")));
        }
        for j in 0..m {
            if p.iter().any(|r| !(r[j] >= 0.0 && r[j].is_finite())) {
                return Err(Error::Config(format!("p column {j} has invalid entries")));
            }
            let s: f64 = p.iter().map(|r| r[j]).sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("p column {j} sums to {s}")));
            }
        }
        let cum_p = (0..m).map(|j| cumulative(p.iter().map(|r| r[j]))).collect();
        let cum_q = cumulative(q.iter().copied());
        let column_constant = p.iter().all(|r| r.iter().all(|v| *v == r[0]));
        Ok(Self { q, p, rho, mode, cum_p, cum_q, column_constant })
    }

    /// `m = 1`, `q = 1`, `p_i1 = w_i / sum w`.
    pub fn single_block_weights(weights: &[f64], rho: f64) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("operator weights must be positive".into()));
        }
        let p = weights.iter().map(|w| vec![w / total]).collect();
        Self::new(vec![1.0], p, rho, BlockMode::IndependentBernoulli)
    }

    /// Uniform over `n` operators on a single block.
    pub fn uniform(n: usize, rho: f64) -> Result<Self> {
        Self::single_block_weights(&vec![1.0; n], rho)
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn mode(&self) -> BlockMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn m(&self) -> usize {
        self.q.len()
    }

    pub fn q_min(&self) -> f64 {
        self.q.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `p_ij > 0` exactly where `(S_i(.))_j` is not identically zero.
    pub fn check_support(&self, family: &OperatorFamily) -> Result<()> {
        if family.n() != self.n() || family.m() != self.m() {
            return Err(Error::Dimension(format!(
                "law is {} x {}, family is {} x {}",
                self.n(),
                self.m(),
                family.n(),
                family.m()
            )));
        }
        for i in 0..self.n() {
            for j in 0..self.m() {
                if (self.p[i][j] > 0.0) == family.zero_block(i, j) {
                    return Err(Error::Config(format!(
                        "support of p[{i}][{j}] = {} does not match operator zero pattern",
                        self.p[i][j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draws `(S_k, i_k, eps_k)` into `out`. An empty block set leaves `i = 0, eps = false`.
    pub fn draw_into(&self, rng: &mut impl Rng, out: &mut Draw) {
        out.blocks.clear();
        let m = self.m();
        match self.mode {
            BlockMode::IndependentBernoulli => {
                for (j, &qj) in self.q.iter().enumerate() {
                    if qj >= 1.0 || rng.random::<f64>() < qj {
                        out.blocks.push(j);
                    }
                }
            }
            BlockMode::SingleBlock => {
                let j = if m == 1 { 0 } else { inverse_cdf(&self.cum_q, rng.random::<f64>()) };
                out.blocks.push(j);
            }
            BlockMode::FixedSize(k) => {
                if k == m {
                    out.blocks.extend(0..m);
                } else {
                    let mut pool: Vec<usize> = (0..m).collect();
                    for t in 0..k {
                        let s = rng.random_range(t..m);
                        pool.swap(t, s);
                    }
                    out.blocks.extend_from_slice(&pool[..k]);
                    out.blocks.sort_unstable();
                }
            }
        }
        if out.blocks.is_empty() {
            out.i = 0;
            out.eps = false;
            return;
        }
        let col = if out.blocks.len() == 1 || self.column_constant {
            out.blocks[0]
        } else {
            out.blocks[rng.random_range(0..out.blocks.len())]
        };
        out.i = if self.n() == 1 { 0 } else { inverse_cdf(&self.cum_p[col], rng.random::<f64>()) };
        out.eps = self.rho >= 1.0 || rng.random::<f64>() < self.rho;
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Draw {
        let mut d = Draw::default();
        self.draw_into(rng, &mut d);
        d
    }
}

/// Importance sampling over operators: `p_i1 = L_i / sum L`.
pub fn importance_law(lipschitz: &[f64]) -> Result<SamplingLaw> {
    if lipschitz.is_empty() || lipschitz.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::Config("importance sampling needs positive Lipschitz constants".into()));
    }
    SamplingLaw::single_block_weights(lipschitz, 1.0)
}

/// Directed graph on operators; `(i, i')` means drawing `i` refreshes dual `i'`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerGraph {
    n: usize,
    out: Vec<Vec<usize>>,
    into: Vec<Vec<usize>>,
}

impl TriggerGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("trigger graph needs vertices".into()));
        }
        let mut out = vec![Vec::new(); n];
        let mut into = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Index(format!("edge ({a}, {b}) with {n} vertices")));
            }
            if !out[a].contains(&b) {
                out[a].push(b);
                into[b].push(a);
            }
        }
        if let Some(i) = (0..n).find(|&i| !out[i].contains(&i)) {
            return Err(Error::Config(format!("vertex {i} lacks a self-loop")));
        }
        out.iter_mut().chain(into.iter_mut()).for_each(|v| v.sort_unstable());
        Ok(Self { n, out, into })
    }

    pub fn self_loops(n: usize) -> Result<Self> {
        Self::from_edges(n, &(0..n).map(|i| (i, i)).collect::<Vec<_>>())
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).collect();
        Self::from_edges(n, &edges)
    }

    /// Self-loops plus an edge from every vertex into the last one.
    pub fn star_into_last(n: usize) -> Result<Self> {
        let mut edges: Vec<_> = (0..n).map(|i| (i, i)).collect();
        edges.extend((0..n).map(|i| (i, n - 1)));
        Self::from_edges(n, &edges)
    }

    /// Every vertex is triggered by itself and its `nt - 1` predecessors (mod `n`).
    pub fn circulant(n: usize, nt: usize) -> Result<Self> {
        if nt == 0 || nt > n {
            return Err(Error::Config(format!("circulant degree {nt} with {n} vertices")));
        }
        let edges: Vec<_> = (0..n).flat_map(|b| (0..nt).map(move |t| ((b + n - t) % n, b))).collect();
        Self::from_edges(n, &edges)
    }

    /// Adds the star into the last vertex.
    pub fn with_star_into_last(&self) -> Self {
        let mut edges = self.edges();
        edges.extend((0..self.n).map(|i| (i, self.n - 1)));
        Self::from_edges(self.n, &edges).expect("adding edges keeps self-loops")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Vertices triggered by `i`.
    pub fn triggers(&self, i: usize) -> &[usize] {
        &self.out[i]
    }

    /// Vertices that trigger `i`.
    pub fn triggered_by(&self, i: usize) -> &[usize] {
        &self.into[i]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.out.iter().enumerate().flat_map(|(a, bs)| bs.iter().map(move |&b| (a, b))).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.out[a].binary_search(&b).is_ok()
    }
}

/// `p^T_ij = sum_{(i', i) in E} p_{i'j} q_j`
pub fn trigger_prob(law: &SamplingLaw, graph: &TriggerGraph, i: usize, j: usize) -> Result<f64> {
    if i >= graph.n() || i >= law.n() || j >= law.m() {
        return Err(Error::Index(format!("trigger_prob({i}, {j})")));
    }
    Ok(graph.triggered_by(i).iter().map(|&a| law.p[a][j]).sum::<f64>() * law.q[j])
}

/// `min_{i,j} rho p^T_ij`
pub fn min_trigger_rate(law: &SamplingLaw, graph: &TriggerGraph) -> Result<f64> {
    let mut best = f64::INFINITY;
    for i in 0..law.n() {
        for j in 0..law.m() {
            best = best.min(law.rho * trigger_prob(law, graph, i, j)?);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphPreset {
    SelfLoops,
    Complete,
    StarIntoLast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TriggerSpec {
    Edges { edges: Vec<[usize; 2]> },
    Preset { preset: GraphPreset },
}

/// JSON form of a law plus its trigger graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub q: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub rho: f64,
    pub block_mode: BlockMode,
    pub trigger: TriggerSpec,
}

impl SamplingSpec {
    pub fn build(&self) -> Result<(SamplingLaw, TriggerGraph)> {
        let law = SamplingLaw::new(self.q.clone(), self.p.clone(), self.rho, self.block_mode)?;
        let n = law.n();
        let graph = match &self.trigger {
            TriggerSpec::Edges { edges } => {
                TriggerGraph::from_edges(n, &edges.iter().map(|e| (e[0], e[1])).collect::<Vec<_>>())?
            }
            TriggerSpec::Preset { preset: GraphPreset::SelfLoops } => TriggerGraph::self_loops(n)?,
            TriggerSpec::Preset { preset: GraphPreset::Complete } => TriggerGraph::complete(n)?,
            TriggerSpec::Preset { preset: GraphPreset::StarIntoLast } => TriggerGraph::star_into_last(n)?,
        };
        Ok((law, graph))
    }

    pub fn from_parts(law: &SamplingLaw, graph: &TriggerGraph) -> Self {
        Self {
            q: law.q.clone(),
            p: law.p.clone(),
            rho: law.rho,
            block_mode: law.mode,
            trigger: TriggerSpec::Edges { edges: graph.edges().into_iter().map(|(a, b)| [a, b]).collect() },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_missing_self_loop() {
        assert!(TriggerGraph::from_edges(2, &[(0, 0), (0, 1)]).is_err());
    }

    #[test]
    fn block_mode_round_trip() {
        for m in [BlockMode::IndependentBernoulli, BlockMode::SingleBlock, BlockMode::FixedSize(3)] {
            assert_eq!(m.to_string().parse::<BlockMode>().unwrap(), m);
        }
    }

    #[test]
    fn circulant_in_degree() {
        let g = TriggerGraph::circulant(8, 2).unwrap();
        assert!((0..8).all(|i| g.triggered_by(i).len() == 2));
    }
}
