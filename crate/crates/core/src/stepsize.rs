//! Step-size bounds and predicted linear rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::OperatorFamily;
use crate::sampling::{min_trigger_rate, SamplingLaw, TriggerGraph};

/// Quantities the bounds are built from.
#[derive(Debug, Clone)]
struct Inputs {
    m: f64,
    q: Vec<f64>,
    q_min: f64,
    /// `n^2 p_ij beta_ij` on active pairs.
    npb: Vec<(usize, f64)>,
    m_hi: Vec<f64>,
    m_hi_min: f64,
    star_zero: bool,
}

impl Inputs {
    fn new(family: &OperatorFamily, law: &SamplingLaw) -> Result<Self> {
        law.check_support(family)?;
        let (n, m) = (family.n(), family.m());
        let eq = family.metric().equivalence_constants(family.layout())?;
        let mut npb = Vec::new();
        for i in 0..n {
            for j in 0..m {
                if family.zero_block(i, j) {
                    continue;
                }
                npb.push((j, (n * n) as f64 * law.p()[i][j] * family.beta()[i][j]));
            }
        }
        if npb.is_empty() {
            return Err(Error::Degenerate("every operator block is identically zero".into()));
        }
        Ok(Self {
            m: m as f64,
            q: law.q().to_vec(),
            q_min: law.q_min(),
            npb,
            m_hi_min: eq.min_upper(),
            m_hi: eq.upper,
            star_zero: family.star_is_zero(),
        })
    }

    fn min_over(&self, f: impl Fn(usize, f64) -> f64) -> f64 {
        self.npb.iter().map(|&(j, v)| f(j, v)).fold(f64::INFINITY, f64::min)
    }
}

/// Largest constant `lambda` allowed by the weak-convergence condition.
///
/// With a band `[lo, hi]` the condition reads `hi^2 < lo * K`; this returns `K`.
pub fn weak_bound_constant(family: &OperatorFamily, law: &SamplingLaw, tau_p: usize, tau_d: usize) -> Result<f64> {
    let s = Inputs::new(family, law)?;
    let (tp, td) = (tau_p as f64, tau_d as f64);
    let sq = s.q_min.sqrt();
    Ok(if s.star_zero {
        s.min_over(|j, v| {
            let mh = s.m_hi[j];
            2.0 * v / (3.0 * mh * tp / (s.m * sq) + 2.0 * mh / (s.q_min * s.m))
        })
    } else {
        s.min_over(|j, v| {
            let mh = s.m_hi[j];
            v / (mh * tp * (2.0 * (td + 2.0)).sqrt() / (s.m * sq) + mh * (td + 2.0) / (s.m * s.q_min))
        })
    })
}

/// Upper end `hi` of an admissible band `[lo, hi]`: `sqrt(lo K)`.
pub fn weak_bound(family: &OperatorFamily, law: &SamplingLaw, tau_p: usize, tau_d: usize, lambda_lo: f64) -> Result<f64> {
    if !(lambda_lo > 0.0 && lambda_lo.is_finite()) {
        return Err(Error::Config(format!("lambda_lo = {lambda_lo}")));
    }
    let k = weak_bound_constant(family, law, tau_p, tau_d)?;
    if lambda_lo > k {
        return Err(Error::Config(format!("lambda_lo = {lambda_lo} exceeds the constant bound {k}")));
    }
    Ok((lambda_lo * k).sqrt())
}

/// Synchronous weak bound: `min n^2 p beta q m / M_hi`, halved when `S* != 0`.
pub fn sync_weak_bound(family: &OperatorFamily, law: &SamplingLaw) -> Result<f64> {
    let s = Inputs::new(family, law)?;
    let half = if s.star_zero { 1.0 } else { 2.0 };
    Ok(s.min_over(|j, v| v * s.q[j] * s.m / (half * s.m_hi[j])))
}

/// Free parameters of the linear-rate bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePlan {
    pub eta: f64,
    pub alpha: f64,
}

impl RatePlan {
    /// `alpha = 1/2`, `eta = 0.99 min rho p^T`.
    pub fn default_for(law: &SamplingLaw, graph: &TriggerGraph) -> Result<Self> {
        Ok(Self { eta: 0.99 * min_trigger_rate(law, graph)?, alpha: 0.5 })
    }

    /// Accepts `0 < eta <= min rho p^T` and `0 <= alpha < 1`.
    pub fn new(eta: f64, alpha: f64, law: &SamplingLaw, graph: &TriggerGraph) -> Result<Self> {
        let cap = min_trigger_rate(law, graph)?;
        if !(eta > 0.0 && eta <= cap * (1.0 + 1e-12)) {
            return Err(Error::Config(format!("eta = {eta} must lie in (0, {cap}]")));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha = {alpha} must lie in [0, 1)")));
        }
        Ok(Self { eta, alpha })
    }
}

/// A step size with its predicted contraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearBound {
    pub lambda: f64,
    /// Contraction of `E dist^2` over `period` iterations.
    pub factor: f64,
    pub period: usize,
}

impl LinearBound {
    pub fn per_iteration(&self) -> f64 {
        self.factor.max(0.0).powf(1.0 / self.period as f64)
    }
}

/// Linear-rate step size and contraction factor.
///
/// `delta` bounds the per-iteration spread `max_j d_kj - min_j d_kj`. With no
/// delays the synchronous bound is used, with factor `1 - 2 alpha mu lambda / m`.
pub fn linear_bound(
    family: &OperatorFamily,
    law: &SamplingLaw,
    graph: &TriggerGraph,
    tau_p: usize,
    tau_d: usize,
    delta: usize,
    plan: RatePlan,
) -> Result<LinearBound> {
    let mu = family.mu().ok_or_else(|| Error::Config("family has no quasi-monotonicity modulus".into()))?;
    RatePlan::new(plan.eta, plan.alpha, law, graph)?;
    if delta > tau_p {
        return Err(Error::Config(format!("delta = {delta} exceeds tau_p = {tau_p}")));
    }
    let s = Inputs::new(family, law)?;
    let RatePlan { eta, alpha } = plan;
    if tau_p == 0 && tau_d == 0 {
        let lambda = if s.star_zero {
            s.min_over(|j, v| (1.0 - alpha) * v * s.q[j] * s.m / s.m_hi[j])
        } else {
            s.min_over(|j, v| {
                eta * (1.0 - alpha) * v * s.q[j] * s.m
                    / (2.0 * s.m_hi[j] * eta + 2.0 * mu * alpha * (1.0 - alpha) * v * s.q[j])
            })
        };
        return Ok(LinearBound { lambda, factor: 1.0 - 2.0 * alpha * mu * lambda / s.m, period: 1 });
    }
    let (tp, td, dl) = (tau_p as f64, tau_d as f64, delta as f64);
    let sq = s.q_min.sqrt();
    let root = (2.0 * (td + 2.0)).sqrt();
    let lambda = s.min_over(|j, v| {
        let mh = s.m_hi[j];
        let inner = 1.0 + dl * eta / (td + 1.0) + 5.0 * root * alpha * alpha * dl / (s.m * s.m_hi_min * (root + tp * sq));
        let first = 2.0 * mh * eta * (td + 2.0) / (s.q[j] * s.m) * inner;
        let second = if tau_p == 0 { 0.0 } else { mh * eta * tp * root / (s.m * sq) * (2.0 + eta / (1.0 - eta)) };
        let third = 4.0 * mu * (td + 1.0) * alpha * (1.0 - alpha) * v;
        2.0 * eta * (1.0 - alpha) * v / (first + second + third)
    });
    Ok(LinearBound { lambda, factor: 1.0 - 2.0 * alpha * mu * lambda / (tp + 1.0), period: tau_p + 1 })
}

/// Named rows of the special-case table, plus the related closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum RateTable {
    Saga { l: f64, mu: f64, n: f64 },
    SvrgAvg { l: f64, mu: f64, tau: f64 },
    SvrgSched { l: f64, mu: f64, tau: f64 },
    /// `mu_hat` is the strong convexity of the objective.
    Finito { l: f64, mu_hat: f64, n: f64 },
    Sdca { l: f64, mu0: f64, n: f64 },
    AltProj { epsilon: f64, l: f64, n: f64, mu_hat: f64 },
    /// `a_inv_norm` is `||A^-1||_2` after row normalization.
    Kaczmarz { n: f64, a_inv_norm: f64 },
    ProxSaga { l: f64, mu_f: f64, mu_g: f64, n: f64 },
    /// SAGA with `P(i) = L_i / sum L`.
    Importance { lipschitz: Vec<f64>, mu: f64 },
    /// SAGA where each operator is triggered by `n_t` operators.
    PostMinibatch { l: f64, mu: f64, n: f64, n_t: f64 },
}

/// The three columns of one table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub largest: Option<f64>,
    pub best_rate_lambda: f64,
    pub rate: f64,
    /// Step parameter `gamma` each column assumes, when the row has one.
    pub largest_gamma: Option<f64>,
    pub best_gamma: Option<f64>,
}

impl RateTable {
    pub const NAMES: [&'static str; 10] = [
        "saga",
        "svrg-avg",
        "svrg-sched",
        "finito",
        "sdca",
        "alt-proj",
        "kaczmarz",
        "prox-saga",
        "importance",
        "post-minibatch",
    ];

    pub fn evaluate(&self) -> Result<RateRow> {
        let row = |largest: f64, best: f64, rate: f64| RateRow {
            largest: Some(largest),
            best_rate_lambda: best,
            rate,
            largest_gamma: None,
            best_gamma: None,
        };
        let out = match *self {
            RateTable::Saga { l, mu, n } => {
                let b = 1.0 / (4.0 * l + mu * n);
                row(1.0 / (2.0 * l), b, 1.0 - mu * b)
            }
            RateTable::SvrgAvg { l, mu, tau } => {
                let b = 1.0 / (4.0 * l + mu * tau);
                row(1.0 / (2.0 * l), b, 1.0 - mu * b)
            }
            RateTable::SvrgSched { l, mu, tau } => {
                let b = 1.0 / (2.0 * l * (tau + 2.0) + mu * (tau + 1.0));
                row(1.0 / ((tau + 2.0) * l), b, 1.0 - mu * b)
            }
            RateTable::Finito { l, mu_hat, n } => RateRow {
                largest: Some(0.5),
                best_rate_lambda: 0.25,
                rate: 1.0 - (1.0 - (1.0 - mu_hat / l).sqrt()) / (4.0 * n),
                largest_gamma: Some(2.0 / l),
                best_gamma: Some(1.0 / l),
            },
            RateTable::Sdca { l, mu0, n } => row(0.75, 0.375, 1.0 - 3.0 * mu0 / (8.0 * (l + mu0 * n))),
            RateTable::AltProj { epsilon, l, n, mu_hat } => {
                row(1.0, 0.5, 1.0 - (epsilon * epsilon / (l * l)).min(1.0) / (2.0 * n * mu_hat))
            }
            RateTable::Kaczmarz { n, a_inv_norm } => row(1.0, 0.5, 1.0 - 1.0 / (2.0 * n * a_inv_norm * a_inv_norm)),
            RateTable::ProxSaga { l, mu_f, mu_g, n } => {
                let g = 1.0 + mu_g / l;
                let r = (1.0 - mu_f / l).sqrt();
                RateRow {
                    largest: None,
                    best_rate_lambda: (n + 1.0) * g / ((16.0 + 2.0 * n) * g - 2.0 * n * r),
                    rate: 1.0 - (g - r) / ((8.0 + n) * g - n * r),
                    largest_gamma: None,
                    best_gamma: Some(1.0 / l),
                }
            }
            RateTable::Importance { ref lipschitz, mu } => {
                if lipschitz.is_empty() {
                    return Err(Error::Config("importance row needs Lipschitz constants".into()));
                }
                let n = lipschitz.len() as f64;
                let total: f64 = lipschitz.iter().sum();
                let b = 1.0 / (4.0 * total / n + mu * n);
                row(1.0 / (2.0 * total / n), b, 1.0 - mu * b)
            }
            RateTable::PostMinibatch { l, mu, n, n_t } => {
                let b = 1.0 / (4.0 * l + 8.0 * mu * n / n_t);
                RateRow { largest: None, best_rate_lambda: b, rate: 1.0 - mu * b, largest_gamma: None, best_gamma: None }
            }
        };
        if [out.best_rate_lambda, out.rate].iter().chain(out.largest.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("table row {self:?} is not finite")));
        }
        Ok(out)
    }
}
