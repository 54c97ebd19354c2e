//! Ready-made instances of the iteration: families, laws, graphs and step sizes.

mod classic;
mod splitting;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde_json::json;

use crate::blockspace::{BlockLayout, BlockVector};
use crate::engine::{DualInit, Smart, SmartState, StepSizes};
use crate::error::{Error, Result};
use crate::operators::OperatorFamily;
use crate::sampling::{min_trigger_rate, SamplingLaw, SamplingSpec, TriggerGraph};
use crate::schedule::{DelayMode, DelaySchedule};
use crate::stepsize::{linear_bound, weak_bound_constant, RatePlan};

pub use classic::{
    coordinate_saga, finito, kaczmarz, minibatch_post, minibatch_pre, projection, prox_saga, saga, sdca, svrg,
    CoordinateBeta, SvrgMode,
};
pub use splitting::{
    lin_saga, mono, prox_smart, prox_smart_plus, saddle, super_saga, tropic, CompressedRun, LinSagaVariant,
    SaddleParts, SuperSagaCompressed, TropicParts,
};

type MapFn = dyn Fn(&BlockVector) -> Result<Vec<f64>> + Send + Sync;

/// Map from a root of the family to a solution of the underlying problem.
#[derive(Clone)]
pub struct Transport {
    label: &'static str,
    f: Arc<MapFn>,
}

impl Transport {
    pub fn new(label: &'static str, f: impl Fn(&BlockVector) -> Result<Vec<f64>> + Send + Sync + 'static) -> Self {
        Self { label, f: Arc::new(f) }
    }

    pub fn identity() -> Self {
        Self::new("identity", |x| Ok(x.as_slice().to_vec()))
    }

    pub fn label(&self) -> &'static str {
        self.label
    }

    pub fn apply(&self, x: &BlockVector) -> Result<Vec<f64>> {
        (self.f)(x)
    }
}

impl fmt::Debug for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Transport({})", self.label)
    }
}

/// Everything needed to run one named instance.
#[derive(Debug, Clone)]
pub struct PresetBundle {
    pub name: &'static str,
    /// The update the bundle realizes, in words.
    pub provenance: String,
    pub family: Arc<OperatorFamily>,
    pub law: SamplingLaw,
    pub graph: TriggerGraph,
    pub schedule: DelaySchedule,
    pub steps: StepSizes,
    pub x0: BlockVector,
    pub dual_init: DualInit,
    pub transport: Transport,
    /// Known solution of the underlying problem, when supplied.
    pub solution: Option<Vec<f64>>,
    embed: Option<Transport>,
}

impl PresetBundle {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        name: &'static str,
        provenance: impl Into<String>,
        family: OperatorFamily,
        law: SamplingLaw,
        graph: TriggerGraph,
        schedule: DelaySchedule,
        dual_init: DualInit,
        transport: Transport,
    ) -> Result<Self> {
        let x0 = BlockVector::zeros(family.layout().clone());
        let steps = default_steps(&family, &law, &graph, &schedule)?;
        let bundle = Self {
            name,
            provenance: provenance.into(),
            family: Arc::new(family),
            law,
            graph,
            schedule,
            steps,
            x0,
            dual_init,
            transport,
            solution: None,
            embed: None,
        };
        bundle.check()?;
        Ok(bundle)
    }

    fn with_embed(mut self, embed: Transport) -> Self {
        self.embed = Some(embed);
        self
    }

    fn check(&self) -> Result<()> {
        let (n, m) = (self.family.n(), self.family.m());
        if self.law.n() != n || self.law.m() != m || self.graph.n() != n {
            return Err(Error::Dimension(format!("{} bundle components disagree on n or m", self.name)));
        }
        if self.x0.layout().as_ref() != self.family.layout().as_ref() {
            return Err(Error::Dimension("initial point layout".into()));
        }
        self.law.check_support(&self.family)
    }

    /// Engine for this bundle.
    pub fn smart(&self) -> Result<Smart> {
        Smart::new(self.family.clone(), self.law.clone(), self.graph.clone(), self.schedule.clone(), self.steps)
    }

    /// Engine plus its initial state on stream `seed`.
    pub fn start(&self, seed: u64) -> Result<(Smart, SmartState)> {
        let smart = self.smart()?;
        let state = smart.init(self.x0.clone(), self.dual_init.clone(), seed)?;
        Ok((smart, state))
    }

    pub fn with_steps(mut self, steps: StepSizes) -> Result<Self> {
        steps.validate()?;
        self.steps = steps;
        Ok(self)
    }

    /// Replaces the schedule and recomputes the default step size for it.
    pub fn with_schedule(mut self, schedule: DelaySchedule) -> Result<Self> {
        self.steps = default_steps(&self.family, &self.law, &self.graph, &schedule)?;
        self.schedule = schedule;
        Ok(self)
    }

    pub fn with_law(mut self, law: SamplingLaw, graph: TriggerGraph) -> Result<Self> {
        self.law = law;
        self.graph = graph;
        self.check()?;
        Ok(self)
    }

    pub fn with_x0(mut self, x0: BlockVector) -> Result<Self> {
        self.x0 = x0;
        self.check()?;
        Ok(self)
    }

    pub fn with_dual_init(mut self, init: DualInit) -> Self {
        self.dual_init = init;
        self
    }

    /// Attaches `x*` as the known root (checked against the residual).
    pub fn with_root(mut self, root: BlockVector) -> Result<Self> {
        self.family = Arc::new(self.family.as_ref().clone().with_root(root)?);
        Ok(self)
    }

    /// Attaches the problem solution and, when the bundle knows how, the matching root.
    pub fn with_solution(mut self, solution: Vec<f64>) -> Result<Self> {
        if let Some(embed) = &self.embed {
            let layout = self.family.layout().clone();
            let w = BlockVector::new(Arc::new(BlockLayout::single(solution.len())?), solution.clone())?;
            let root = BlockVector::new(layout, embed.apply(&w)?)?;
            self = self.with_root(root)?;
        }
        self.solution = Some(solution);
        Ok(self)
    }

    /// JSON summary for display.
    pub fn describe(&self) -> serde_json::Value {
        let (lo, hi) = self.steps.bounds();
        json!({
            "name": self.name,
            "provenance": self.provenance,
            "n": self.family.n(),
            "m": self.family.m(),
            "dims": self.family.layout().dims(),
            "mu": self.family.mu(),
            "star_is_zero": self.family.star_is_zero(),
            "beta": self.family.beta(),
            "sampling": SamplingSpec::from_parts(&self.law, &self.graph),
            "tau_p": self.schedule.tau_p(),
            "tau_d": self.schedule.tau_d(),
            "lambda_lo": lo,
            "lambda_hi": hi,
            "transport": self.transport.label(),
            "has_root": self.family.known_root().is_some(),
        })
    }
}

/// Worst per-iteration spread of primal delays the schedule can produce.
pub fn schedule_spread(schedule: &DelaySchedule) -> usize {
    match schedule.primal_mode() {
        DelayMode::Zero | DelayMode::ConstantMax | DelayMode::Cyclic => 0,
        DelayMode::UniformRandom | DelayMode::Recorded => schedule.tau_p(),
    }
}

/// Which bound produced a step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundSource {
    /// Linear-rate bound with `alpha = 1/2`.
    LinearRate,
    /// 0.99 of the weak-convergence bound.
    Weak,
}

/// Default step size together with where it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRule {
    pub steps: StepSizes,
    pub source: BoundSource,
    /// Largest step the weak-convergence bound allows.
    pub weak_bound: f64,
    /// Predicted per-iteration contraction of `E dist^2`, when a modulus is known.
    pub predicted_factor: Option<f64>,
}

/// The linear-rate bound when a modulus is known, else 0.99 of the weak bound.
pub fn step_rule(
    family: &OperatorFamily,
    law: &SamplingLaw,
    graph: &TriggerGraph,
    schedule: &DelaySchedule,
) -> Result<StepRule> {
    let (tp, td) = (schedule.tau_p(), schedule.tau_d());
    let weak = weak_bound_constant(family, law, tp, td)?;
    match family.mu() {
        Some(mu) if mu > 0.0 => {
            let cap = min_trigger_rate(law, graph)?;
            let eta = if tp == 0 { cap } else { (0.99 * cap).min(0.99) };
            let b = linear_bound(family, law, graph, tp, td, schedule_spread(schedule), RatePlan { eta, alpha: 0.5 })?;
            Ok(StepRule {
                steps: StepSizes::Constant(b.lambda),
                source: BoundSource::LinearRate,
                weak_bound: weak,
                predicted_factor: Some(b.per_iteration()),
            })
        }
        _ => Ok(StepRule {
            steps: StepSizes::Constant(0.99 * weak),
            source: BoundSource::Weak,
            weak_bound: weak,
            predicted_factor: None,
        }),
    }
}

/// Step sizes of [`step_rule`].
pub fn default_steps(
    family: &OperatorFamily,
    law: &SamplingLaw,
    graph: &TriggerGraph,
    schedule: &DelaySchedule,
) -> Result<StepSizes> {
    step_rule(family, law, graph, schedule).map(|r| r.steps)
}

fn matvec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = a.row(r).iter().zip(x).map(|(u, v)| u * v).sum();
    }
}

fn matvec_t_add(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (c, o) in out.iter_mut().enumerate() {
        *o += a.column(c).iter().zip(x).map(|(u, v)| u * v).sum::<f64>();
    }
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        a.clone().singular_values().max()
    }
}

fn single_layout(d: usize) -> Result<Arc<BlockLayout>> {
    Ok(Arc::new(BlockLayout::single(d)?))
}
