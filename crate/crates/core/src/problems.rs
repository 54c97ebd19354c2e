//! Seeded test problems with reference solutions, and the presets that solve them.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blockspace::BlockLayout;
use crate::diagnostics::find_root;
use crate::error::{Error, Result};
use crate::operators::{GradientMap, LeastSquares, LipschitzMap, Logistic, MonotoneOp, ProxFn, Quadratic, SmoothFn};
use crate::presets::{self, LinSagaVariant, PresetBundle, SvrgMode, TropicParts};
use crate::rng::{stream, Stream};
use crate::sampling::TriggerGraph;

/// Dense matrix stored row by row.
pub type Rows = Vec<Vec<f64>>;

fn to_matrix(rows: &Rows) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("ragged matrix".into()));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Generator request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSpec {
    Ridge { rows: usize, cols: usize, ridge: f64 },
    Lasso { rows: usize, cols: usize, l1: f64 },
    Logistic { rows: usize, cols: usize, ridge: f64 },
    LinearSystem { rows: usize, cols: usize },
    Feasibility { sets: usize, dim: usize, #[serde(default)] empty: bool },
    EqualityQp { rows: usize, cols: usize, constraints: usize, ridge: f64 },
    Fused { dim: usize, weight: f64 },
}

/// A generated instance; `solution` minimizes the stated objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Problem {
    /// `(1/n) sum_i ((<a_i, x> - b_i)^2 / 2 + x^T K x / 2)`
    Ridge { a: Rows, b: Vec<f64>, k: Rows, solution: Vec<f64> },
    /// `(1/n) sum_i (<a_i, x> - b_i)^2 / 2 + l1 ||x||_1`
    Lasso { a: Rows, b: Vec<f64>, l1: f64, solution: Vec<f64> },
    /// `(1/n) sum_i (log(1 + exp(-y_i <a_i, x>)) + ridge ||x||^2 / 2)`
    Logistic { a: Rows, labels: Vec<f64>, ridge: f64, solution: Vec<f64> },
    /// `A x = b`, consistent by construction.
    LinearSystem { a: Rows, b: Vec<f64>, solution: Vec<f64> },
    /// `<a_i, x> <= b_i` for every row; `point` is feasible.
    Feasibility { a: Rows, b: Vec<f64>, point: Vec<f64> },
    /// Ridge objective on `(a, b)` subject to `C x = e`.
    EqualityQp { a: Rows, b: Vec<f64>, ridge: f64, c: Rows, e: Vec<f64>, solution: Vec<f64> },
    /// `||x - c||^2 / 2 + weight sum_t |x_{t+1} - x_t|`
    Fused { c: Vec<f64>, weight: f64, solution: Vec<f64> },
}

fn gaussian_matrix(rng: &mut impl Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

fn gaussian_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{name} must be positive")));
    }
    Ok(())
}

fn solve_spd(h: DMatrix<f64>, g: DVector<f64>) -> Result<DVector<f64>> {
    h.cholesky()
        .map(|c| c.solve(&g))
        .ok_or_else(|| Error::Numerical("system matrix is not positive definite".into()))
}

/// Cyclic coordinate descent for the lasso objective.
fn lasso_oracle(a: &DMatrix<f64>, b: &DVector<f64>, l1: f64) -> Vec<f64> {
    let (n, d) = a.shape();
    let nf = n as f64;
    let col_sq: Vec<f64> = (0..d).map(|j| a.column(j).norm_squared() / nf).collect();
    let mut x: DVector<f64> = DVector::zeros(d);
    let mut r = b.clone();
    for _ in 0..100_000 {
        let mut change: f64 = 0.0;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let rho = a.column(j).dot(&r) / nf + col_sq[j] * x[j];
            let new = rho.signum() * (rho.abs() - l1).max(0.0) / col_sq[j];
            let delta = new - x[j];
            if delta != 0.0 {
                r.axpy(-delta, &a.column(j), 1.0);
                x[j] = new;
                change = change.max(delta.abs());
            }
        }
        if change < 1e-15 {
            break;
        }
    }
    x.iter().copied().collect()
}

/// Newton's method for regularized logistic regression.
fn logistic_oracle(a: &DMatrix<f64>, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let (n, d) = a.shape();
    let mut x = DVector::zeros(d);
    for _ in 0..100 {
        let mut g = &x * ridge;
        let mut h = DMatrix::identity(d, d) * ridge;
        for i in 0..n {
            let ai = a.row(i).transpose();
            let t = y[i] * ai.dot(&x);
            let s = 1.0 / (1.0 + t.exp());
            g -= &ai * (y[i] * s / n as f64);
            h += &ai * ai.transpose() * (s * (1.0 - s) / n as f64);
        }
        let step = solve_spd(h, g.clone())?;
        x -= &step;
        if step.amax() < 1e-15 {
            break;
        }
    }
    Ok(x.iter().copied().collect())
}

/// First-difference matrix of size `(d - 1) x d`.
pub fn difference_matrix(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d.saturating_sub(1), d, |r, c| match c as i64 - r as i64 {
        0 => -1.0,
        1 => 1.0,
        _ => 0.0,
    })
}

/// Projected gradient on the box-constrained dual `min_{|u| <= w} ||c - D^T u||^2 / 2`.
fn fused_oracle(c: &[f64], weight: f64) -> Vec<f64> {
    let d = c.len();
    let dm = difference_matrix(d);
    let cv = DVector::from_column_slice(c);
    let step = 1.0 / 4.0;
    let mut u = DVector::zeros(d.saturating_sub(1));
    for _ in 0..2_000_000 {
        let x = &cv - dm.transpose() * &u;
        let next = (&u + &dm * &x * step).map(|v| v.clamp(-weight, weight));
        let change = (&next - &u).amax();
        u = next;
        if change < 1e-16 {
            break;
        }
    }
    (&cv - dm.transpose() * &u).iter().copied().collect()
}

impl ProblemSpec {
    /// Generates the instance and its reference solution from `seed`.
    pub fn generate(&self, seed: u64) -> Result<Problem> {
        let mut rng = stream(seed, Stream::Problem);
        match *self {
            ProblemSpec::Ridge { rows, cols, ridge } => {
                positive("rows", rows)?;
                positive("cols", cols)?;
                if !(ridge > 0.0) {
                    return Err(Error::Config("ridge weight must be positive".into()));
                }
                let a = gaussian_matrix(&mut rng, rows, cols);
                let b = gaussian_vector(&mut rng, rows);
                let k = DMatrix::identity(cols, cols) * ridge;
                let n = rows as f64;
                let x = solve_spd(a.transpose() * &a / n + &k, a.transpose() * &b / n)?;
                Ok(Problem::Ridge { a: from_matrix(&a), b: b.iter().copied().collect(), k: from_matrix(&k), solution: x.iter().copied().collect() })
            }
            ProblemSpec::Lasso { rows, cols, l1 } => {
                positive("rows", rows)?;
                positive("cols", cols)?;
                if !(l1 > 0.0) {
                    return Err(Error::Config("l1 weight must be positive".into()));
                }
                let a = gaussian_matrix(&mut rng, rows, cols);
                let truth = DVector::from_fn(cols, |j, _| if j % 3 == 0 { 1.0 + j as f64 / cols as f64 } else { 0.0 });
                let noise = gaussian_vector(&mut rng, rows) * 0.1;
                let b = &a * truth + noise;
                let x = lasso_oracle(&a, &b, l1);
                Ok(Problem::Lasso { a: from_matrix(&a), b: b.iter().copied().collect(), l1, solution: x })
            }
            ProblemSpec::Logistic { rows, cols, ridge } => {
                positive("rows", rows)?;
                positive("cols", cols)?;
                if !(ridge > 0.0) {
                    return Err(Error::Config("ridge weight must be positive".into()));
                }
                let a = gaussian_matrix(&mut rng, rows, cols);
                let w = gaussian_vector(&mut rng, cols);
                let labels: Vec<f64> = (0..rows)
                    .map(|i| {
                        let z = a.row(i).transpose().dot(&w) + rng.sample::<f64, _>(StandardNormal);
                        if z >= 0.0 { 1.0 } else { -1.0 }
                    })
                    .collect();
                let x = logistic_oracle(&a, &labels, ridge)?;
                Ok(Problem::Logistic { a: from_matrix(&a), labels, ridge, solution: x })
            }
            ProblemSpec::LinearSystem { rows, cols } => {
                positive("rows", rows)?;
                positive("cols", cols)?;
                let a = gaussian_matrix(&mut rng, rows, cols);
                let x = gaussian_vector(&mut rng, cols);
                let x = if rows < cols {
                    a.clone().pseudo_inverse(1e-12).map_err(|e| Error::Numerical(e.to_string()))? * (&a * &x)
                } else {
                    x
                };
                let b = &a * &x;
                Ok(Problem::LinearSystem { a: from_matrix(&a), b: b.iter().copied().collect(), solution: x.iter().copied().collect() })
            }
            ProblemSpec::Feasibility { sets, dim, empty } => {
                if empty {
                    return Err(Error::Config("refusing to generate an infeasible set system".into()));
                }
                positive("sets", sets)?;
                positive("dim", dim)?;
                let point = gaussian_vector(&mut rng, dim);
                let mut a = gaussian_matrix(&mut rng, sets, dim);
                for mut r in a.row_iter_mut() {
                    let norm = r.norm();
                    r /= norm;
                }
                let b: Vec<f64> =
                    (0..sets).map(|i| a.row(i).transpose().dot(&point) + rng.random_range(0.0..1.0)).collect();
                Ok(Problem::Feasibility { a: from_matrix(&a), b, point: point.iter().copied().collect() })
            }
            ProblemSpec::EqualityQp { rows, cols, constraints, ridge } => {
                positive("rows", rows)?;
                positive("cols", cols)?;
                positive("constraints", constraints)?;
                if constraints >= cols || !(ridge > 0.0) {
                    return Err(Error::Config("need fewer constraints than columns and a positive ridge".into()));
                }
                let a = gaussian_matrix(&mut rng, rows, cols);
                let b = gaussian_vector(&mut rng, rows);
                let c = gaussian_matrix(&mut rng, constraints, cols);
                let e = gaussian_vector(&mut rng, constraints);
                let n = rows as f64;
                let h = a.transpose() * &a / n + DMatrix::identity(cols, cols) * ridge;
                let g = a.transpose() * &b / n;
                let size = cols + constraints;
                let mut kkt = DMatrix::zeros(size, size);
                kkt.view_mut((0, 0), (cols, cols)).copy_from(&h);
                kkt.view_mut((0, cols), (cols, constraints)).copy_from(&c.transpose());
                kkt.view_mut((cols, 0), (constraints, cols)).copy_from(&c);
                let mut rhs = DVector::zeros(size);
                rhs.rows_mut(0, cols).copy_from(&g);
                rhs.rows_mut(cols, constraints).copy_from(&e);
                let sol = kkt.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular KKT system".into()))?;
                Ok(Problem::EqualityQp {
                    a: from_matrix(&a),
                    b: b.iter().copied().collect(),
                    ridge,
                    c: from_matrix(&c),
                    e: e.iter().copied().collect(),
                    solution: sol.rows(0, cols).iter().copied().collect(),
                })
            }
            ProblemSpec::Fused { dim, weight } => {
                if dim < 2 || !(weight > 0.0) {
                    return Err(Error::Config("fused problem needs dim >= 2 and a positive weight".into()));
                }
                let c: Vec<f64> = (0..dim)
                    .map(|t| if t < dim / 2 { 1.0 } else { -1.0 } + 0.3 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let solution = fused_oracle(&c, weight);
                Ok(Problem::Fused { c, weight, solution })
            }
        }
    }
}

/// Parameters for the presets that need more than the problem data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetParams {
    /// SVRG epoch length.
    pub tau: usize,
    /// Prox or resolvent parameter; each preset has its own default.
    pub gamma: Option<f64>,
    /// Mini-batch size for pre-update batching.
    pub batch: usize,
    /// Trigger out-degree for post-update batching.
    pub neighbors: usize,
    /// Coupling budget of the primal-dual presets.
    pub delta: f64,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self { tau: 10, gamma: None, batch: 2, neighbors: 2, delta: 0.25 }
    }
}

/// Residual target of the deterministic root search used when no closed-form root exists.
pub const ROOT_TOL: f64 = 1e-11;
const ROOT_ITERS: u64 = 2_000_000;

/// Names accepted by [`Problem::bundle`].
pub const PRESETS: &[&str] = &[
    "saga",
    "saga-importance",
    "svrg-avg",
    "svrg-sched",
    "finito",
    "sdca",
    "kaczmarz",
    "projection",
    "prox-saga",
    "coordinate-saga",
    "minibatch-pre",
    "minibatch-post",
    "lin-saga",
    "lin-svrg",
    "super-saga",
    "super-svrg",
    "tropic",
    "prox-smart",
    "prox-smart-plus",
    "mono",
];

fn smooth_rows(a: &DMatrix<f64>, b: &[f64], k: &DMatrix<f64>) -> Result<Vec<Arc<dyn SmoothFn>>> {
    (0..a.nrows())
        .map(|i| {
            let ai = a.row(i).transpose();
            Quadratic::new(&ai * ai.transpose() + k, &ai * b[i])
                .map(|q| q.with_constant(0.5 * b[i] * b[i]))
                .map(|q| Arc::new(q) as Arc<dyn SmoothFn>)
        })
        .collect()
}

fn ls_rows(a: &DMatrix<f64>, b: &[f64], ridge: f64) -> Result<Vec<Arc<dyn SmoothFn>>> {
    (0..a.nrows())
        .map(|i| {
            let ai: Vec<f64> = a.row(i).iter().copied().collect();
            LeastSquares::row(&ai, b[i], ridge).map(|f| Arc::new(f) as Arc<dyn SmoothFn>)
        })
        .collect()
}

/// Ridge weight when `K` is a multiple of the identity.
fn scalar_ridge(k: &DMatrix<f64>) -> Option<f64> {
    let w = k[(0, 0)];
    let d = k.nrows();
    (k - DMatrix::identity(d, d) * w).amax().le(&(1e-14 * w.abs().max(1.0))).then_some(w)
}

fn unsupported(preset: &str, kind: &str) -> Error {
    Error::Config(format!("preset {preset} does not apply to {kind} problems"))
}

fn smooth_presets(
    preset: &str,
    kind: &str,
    fs: Vec<Arc<dyn SmoothFn>>,
    params: &PresetParams,
) -> Result<PresetBundle> {
    match preset {
        "saga" => presets::saga(fs, false),
        "saga-importance" => presets::saga(fs, true),
        "svrg-avg" => presets::svrg(fs, params.tau, SvrgMode::Avg),
        "svrg-sched" => presets::svrg(fs, params.tau, SvrgMode::Scheduled),
        "finito" => {
            let l = fs.iter().map(|f| f.lipschitz()).fold(0.0, f64::max);
            let gamma = params.gamma.unwrap_or(1.0 / l);
            presets::finito(fs, gamma)
        }
        "prox-saga" => presets::prox_saga(fs, ProxFn::Zero, params.gamma),
        "coordinate-saga" => {
            let d = fs[0].dim();
            let layout = Arc::new(BlockLayout::uniform(d, 1)?);
            presets::coordinate_saga(fs, layout, presets::CoordinateBeta::Global)
        }
        "minibatch-pre" => {
            let size = params.batch.max(1);
            let batches: Vec<Vec<usize>> = (0..fs.len()).collect::<Vec<_>>().chunks(size).map(<[usize]>::to_vec).collect();
            presets::minibatch_pre(fs, &batches, params.tau)
        }
        "minibatch-post" => {
            let graph = TriggerGraph::circulant(fs.len(), params.neighbors.clamp(1, fs.len()))?;
            presets::minibatch_post(fs, graph)
        }
        _ => Err(unsupported(preset, kind)),
    }
}

impl Problem {
    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Ridge { .. } => "ridge",
            Problem::Lasso { .. } => "lasso",
            Problem::Logistic { .. } => "logistic",
            Problem::LinearSystem { .. } => "linear-system",
            Problem::Feasibility { .. } => "feasibility",
            Problem::EqualityQp { .. } => "equality-qp",
            Problem::Fused { .. } => "fused",
        }
    }

    /// Reference solution, when the problem has a unique one.
    pub fn solution(&self) -> Option<&[f64]> {
        match self {
            Problem::Ridge { solution, .. }
            | Problem::Lasso { solution, .. }
            | Problem::Logistic { solution, .. }
            | Problem::LinearSystem { solution, .. }
            | Problem::EqualityQp { solution, .. }
            | Problem::Fused { solution, .. } => Some(solution),
            Problem::Feasibility { .. } => None,
        }
    }

    /// Whether the reference solution is the only minimizer seen by `preset`.
    ///
    /// Least squares on an underdetermined system is minimized by a whole affine set;
    /// only the row-action presets know how to attach it.
    fn unique_for(&self, preset: &str) -> bool {
        match self {
            Problem::LinearSystem { a, .. } => {
                a.len() >= a.first().map_or(0, Vec::len) || matches!(preset, "kaczmarz" | "projection")
            }
            _ => true,
        }
    }

    /// Builds `preset` for this problem and attaches the reference solution.
    pub fn bundle(&self, preset: &str, params: &PresetParams) -> Result<PresetBundle> {
        let kind = self.kind();
        let bundle = match self {
            Problem::Ridge { a, b, k, .. } => {
                let (a, k) = (to_matrix(a)?, to_matrix(k)?);
                match preset {
                    "sdca" => {
                        let mu0 = scalar_ridge(&k).ok_or_else(|| Error::Config("sdca needs K = mu0 I".into()))?;
                        presets::sdca(ls_rows(&a, b, 0.0)?, mu0)?
                    }
                    "mono" => {
                        let w = scalar_ridge(&k).ok_or_else(|| Error::Config("mono needs K = mu I".into()))?;
                        let bs: Vec<Arc<dyn LipschitzMap>> = ls_rows(&a, b, 0.0)?
                            .into_iter()
                            .map(|f| Arc::new(GradientMap(f)) as Arc<dyn LipschitzMap>)
                            .collect();
                        let lbar = bs.iter().map(|m| m.lipschitz()).sum::<f64>() / bs.len() as f64;
                        let gamma = params.gamma.unwrap_or(w / (lbar * lbar));
                        presets::mono(MonotoneOp::Subdiff(ProxFn::SqL2 { weight: w }), bs, gamma)?
                    }
                    _ => smooth_presets(preset, kind, smooth_rows(&a, b, &k)?, params)?,
                }
            }
            Problem::Logistic { a, labels, ridge, .. } => {
                let fs: Vec<Arc<dyn SmoothFn>> = a
                    .iter()
                    .zip(labels)
                    .map(|(r, y)| Logistic::new(r.clone(), *y, *ridge).map(|f| Arc::new(f) as Arc<dyn SmoothFn>))
                    .collect::<Result<_>>()?;
                smooth_presets(preset, kind, fs, params)?
            }
            Problem::Lasso { a, b, l1, .. } => {
                let fs = ls_rows(&to_matrix(a)?, b, 0.0)?;
                match preset {
                    "prox-saga" => presets::prox_saga(fs, ProxFn::L1 { weight: *l1 }, params.gamma)?,
                    "super-saga" | "super-svrg" => {
                        let variant = if preset == "super-saga" {
                            LinSagaVariant::Saga
                        } else {
                            LinSagaVariant::Svrg { tau: params.tau }
                        };
                        let half = ProxFn::L1 { weight: l1 / 2.0 };
                        presets::super_saga(fs, vec![half.clone(), half], variant)?
                    }
                    _ => return Err(unsupported(preset, kind)),
                }
            }
            Problem::LinearSystem { a, b, .. } => {
                let (a, b) = (to_matrix(a)?, DVector::from_column_slice(b));
                match preset {
                    "kaczmarz" => presets::kaczmarz(&a, &b)?,
                    "projection" => {
                        let sets = (0..a.nrows())
                            .map(|i| ProxFn::Hyperplane { a: a.row(i).iter().copied().collect(), b: b[i] })
                            .collect();
                        presets::projection(sets, Vec::new())?
                    }
                    _ => smooth_presets(preset, kind, ls_rows(&a, b.as_slice(), 0.0)?, params)?,
                }
            }
            Problem::Feasibility { a, b, .. } => match preset {
                "projection" => {
                    let sets = a.iter().zip(b).map(|(r, bi)| ProxFn::Halfspace { a: r.clone(), b: *bi }).collect();
                    presets::projection(sets, Vec::new())?
                }
                _ => return Err(unsupported(preset, kind)),
            },
            Problem::EqualityQp { a, b, ridge, c, e, .. } => {
                let (a, c, e) = (to_matrix(a)?, to_matrix(c)?, DVector::from_column_slice(e));
                let fs = ls_rows(&a, b, *ridge)?;
                match preset {
                    "lin-saga" => presets::lin_saga(fs, ProxFn::Zero, &c, &e, None, LinSagaVariant::Saga)?,
                    "lin-svrg" => {
                        presets::lin_saga(fs, ProxFn::Zero, &c, &e, None, LinSagaVariant::Svrg { tau: params.tau })?
                    }
                    "tropic" => {
                        let n = fs.len() as f64;
                        let terms = fs.into_iter().map(|f| (1.0 / n, f)).collect();
                        let f: Arc<dyn SmoothFn> = Arc::new(crate::operators::SumFn::new(terms)?);
                        let delta = params.delta;
                        let g1 = params.gamma.unwrap_or((1.0 - delta.sqrt()) / f.lipschitz());
                        let cn = c.clone().singular_values().max();
                        let g2 = delta / (g1 * cn * cn);
                        presets::tropic(TropicParts {
                            gs: vec![ProxFn::Zero],
                            f: Some(f),
                            a: vec![c],
                            b: e,
                            gammas: vec![g1, g2],
                            delta,
                        })?
                    }
                    _ => return Err(unsupported(preset, kind)),
                }
            }
            Problem::Fused { c, weight, .. } => {
                let d = c.len();
                let dm = difference_matrix(d);
                let dn = dm.clone().singular_values().max();
                let delta = params.delta;
                match preset {
                    "prox-smart" => {
                        let g1 = params.gamma.unwrap_or(1.0);
                        let g2 = delta / (g1 * dn * dn);
                        presets::prox_smart(
                            vec![ProxFn::SqDist { weight: 1.0, center: c.clone() }, ProxFn::L1 { weight: *weight }],
                            vec![dm],
                            vec![g1, g2],
                            delta,
                        )?
                    }
                    "prox-smart-plus" => {
                        let f: Arc<dyn SmoothFn> = Arc::new(Quadratic::isotropic(1.0, c)?);
                        let g1 = params.gamma.unwrap_or(delta);
                        let budget = delta / g1 - 0.5;
                        if budget <= 0.0 {
                            return Err(Error::Config("gamma leaves no room for the dual step".into()));
                        }
                        let g2 = budget / (dn * dn);
                        presets::prox_smart_plus(vec![f], vec![ProxFn::L1 { weight: *weight }], vec![dm], vec![g1, g2], delta)?
                    }
                    _ => return Err(unsupported(preset, kind)),
                }
            }
        };
        let bundle = match self.solution() {
            Some(s) if self.unique_for(preset) => bundle.with_solution(s.to_vec())?,
            _ => bundle,
        };
        if bundle.family.known_root().is_some() {
            return Ok(bundle);
        }
        let root = find_root(&bundle.family, &bundle.x0, ROOT_TOL, ROOT_ITERS)?;
        bundle.with_root(root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_matrix_shape() {
        let d = difference_matrix(4);
        assert_eq!(d.shape(), (3, 4));
        assert_eq!(d[(1, 1)], -1.0);
        assert_eq!(d[(1, 2)], 1.0);
    }

    #[test]
    fn infeasible_request_is_refused() {
        let spec = ProblemSpec::Feasibility { sets: 3, dim: 2, empty: true };
        assert!(spec.generate(1).is_err());
    }
}
