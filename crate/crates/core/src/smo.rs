//! Subset selection over the Boolean lattice of experts.
//!
//! The search keeps a set of vertices whose down-sets cover every subset not
//! yet ruled out. Each round picks the best vertex; if it is feasible it is
//! optimal (the objective is monotone), otherwise it is projected down a
//! chain onto the feasible region. The last infeasible chain point `z` has an
//! infeasible up-set, which is cut away by replacing the vertex with
//! `S_k - e_i` for each `i ∈ z`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::costs::CostTable;
use crate::domain::{ConstraintSet, SubsetMask};
use crate::error::{Error, Result};
use crate::gating::{
    loss_with_weights, normalize_weights, positive_scores, tabular_optimal_loss, GatingDataset, GatingParams,
};

/// Largest fleet the exhaustive oracle accepts.
pub const EXHAUSTIVE_MAX_EXPERTS: usize = 20;

/// Score of a subset, larger is better.
pub trait Objective: Sync {
    fn value(&self, s: SubsetMask) -> Result<f64>;
}

impl<F: Fn(SubsetMask) -> Result<f64> + Sync> Objective for F {
    fn value(&self, s: SubsetMask) -> Result<f64> {
        self(s)
    }
}

pub trait Feasibility: Sync {
    fn is_feasible(&self, s: SubsetMask) -> Result<bool>;
}

impl<F: Fn(SubsetMask) -> Result<bool> + Sync> Feasibility for F {
    fn is_feasible(&self, s: SubsetMask) -> Result<bool> {
        self(s)
    }
}

/// Caches objective values by bitmask.
pub struct Memo<O> {
    inner: O,
    cache: Mutex<HashMap<u64, f64>>,
    evaluations: AtomicUsize,
}

impl<O: Objective> Memo<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()), evaluations: AtomicUsize::new(0) }
    }

    /// Number of distinct masks evaluated.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }
}

impl<O: Objective> Objective for Memo<O> {
    fn value(&self, s: SubsetMask) -> Result<f64> {
        if let Some(v) = self.cache.lock().expect("memo poisoned").get(&s.bits()) {
            return Ok(*v);
        }
        let v = self.inner.value(s)?;
        let mut cache = self.cache.lock().expect("memo poisoned");
        if cache.insert(s.bits(), v).is_none() {
            self.evaluations.fetch_add(1, Ordering::Relaxed);
        }
        Ok(v)
    }
}

struct ByRef<'a, O: ?Sized>(&'a O);

impl<O: Objective + ?Sized> Objective for ByRef<'_, O> {
    fn value(&self, s: SubsetMask) -> Result<f64> {
        self.0.value(s)
    }
}

/// Negated empirical loss with the full-fleet gate restricted to `S`. Gate
/// scores are computed once per prompt at construction.
pub struct RestrictedGateObjective<'a> {
    scores: Vec<Vec<f64>>,
    data: &'a GatingDataset,
}

impl<'a> RestrictedGateObjective<'a> {
    pub fn new(theta: &GatingParams, data: &'a GatingDataset) -> Result<Self> {
        if theta.output_dim != data.n_experts() {
            return Err(Error::Dimension { expected: data.n_experts(), got: theta.output_dim });
        }
        let scores = (0..data.len())
            .into_par_iter()
            .map(|i| Ok(positive_scores(&theta.forward(data.input(i))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scores, data })
    }
}

impl Objective for RestrictedGateObjective<'_> {
    /// Same arithmetic as [`crate::gating::empirical_loss`], so values agree bit for bit.
    fn value(&self, s: SubsetMask) -> Result<f64> {
        let losses = self
            .scores
            .par_iter()
            .enumerate()
            .map(|(i, g)| Ok(loss_with_weights(&normalize_weights(g, s)?, self.data.targets(i))))
            .collect::<Result<Vec<f64>>>()?;
        Ok(-(losses.iter().sum::<f64>() / losses.len() as f64))
    }
}

/// Negated loss of per-prompt optimal weights re-solved on `S`.
pub struct TabularObjective<'a> {
    pub data: &'a GatingDataset,
}

impl Objective for TabularObjective<'_> {
    fn value(&self, s: SubsetMask) -> Result<f64> {
        Ok(-tabular_optimal_loss(self.data, s)?)
    }
}

/// Expected-cost feasibility against a constraint set.
pub struct CostFeasibility<'a> {
    pub table: &'a CostTable,
    pub constraints: &'a ConstraintSet,
}

impl Feasibility for CostFeasibility<'_> {
    fn is_feasible(&self, s: SubsetMask) -> Result<bool> {
        Ok(self.table.is_feasible(s, self.constraints)?.feasible)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Full-fleet gate restricted and renormalised on `S`.
    Restricted,
    /// Exact per-prompt re-optimisation on `S`.
    Tabular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub objective: ObjectiveMode,
}

impl Default for SmoConfig {
    fn default() -> Self {
        Self { epsilon: 0.0, max_iterations: 10_000, objective: ObjectiveMode::Restricted }
    }
}

impl SmoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be nonnegative"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        Ok(())
    }
}

/// Result of projecting a mask down its removal chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// Greatest feasible point of the chain; `None` when even the last
    /// singleton is infeasible.
    pub feasible: Option<SubsetMask>,
    /// Last infeasible point of the chain (equal to the input when the input
    /// is infeasible and nothing was dropped yet).
    pub last_infeasible: Option<SubsetMask>,
    /// Members in removal order.
    pub order: Vec<usize>,
}

/// Drops members of `s` in ascending order of marginal contribution
/// `f(S) - f(S - i)` (ties to the smaller id) until the mask is feasible.
pub fn projection_pi_g<O: Objective, F: Feasibility>(s: SubsetMask, objective: &O, feasibility: &F) -> Result<Projection> {
    s.require_nonempty()?;
    if feasibility.is_feasible(s)? {
        return Ok(Projection { feasible: Some(s), last_infeasible: None, order: Vec::new() });
    }
    let base = objective.value(s)?;
    let members = s.member_vec();
    let mut marginal = Vec::with_capacity(members.len());
    for &i in &members {
        let rest = s.without(i);
        let m = if rest.is_empty() { f64::INFINITY } else { base - objective.value(rest)? };
        marginal.push((m, i));
    }
    marginal.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = marginal.iter().map(|&(_, i)| i).collect();

    let mut z = s;
    for &i in &order {
        let next = z.without(i);
        if next.is_empty() {
            break;
        }
        if feasibility.is_feasible(next)? {
            return Ok(Projection { feasible: Some(next), last_infeasible: Some(z), order });
        }
        z = next;
    }
    Ok(Projection { feasible: None, last_infeasible: Some(z), order })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoStep {
    pub iteration: usize,
    /// |T_k| after pruning.
    pub vertices: usize,
    pub selected: SubsetMask,
    pub selected_value: f64,
    pub projection: Option<SubsetMask>,
    /// Incumbent value after this step; `None` until a feasible mask is seen.
    pub cbv: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoTrace {
    pub steps: Vec<SmoStep>,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoStatus {
    /// The selected vertex was feasible.
    Optimal,
    /// The vertex set emptied; the incumbent is within ε of the optimum.
    EpsilonOptimal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoOutcome {
    pub mask: SubsetMask,
    pub value: f64,
    pub status: SmoStatus,
    pub trace: SmoTrace,
}

fn best_of(items: &[(SubsetMask, f64)]) -> Option<(SubsetMask, f64)> {
    let mut best: Option<(SubsetMask, f64)> = None;
    for &(m, v) in items {
        best = match best {
            None => Some((m, v)),
            Some((bm, bv)) => {
                if v > bv || (v == bv && m.tie_break_cmp(&bm).is_lt()) {
                    Some((m, v))
                } else {
                    Some((bm, bv))
                }
            }
        };
    }
    best
}

/// Keeps only maximal masks, deduplicated, in ascending bit order.
fn maximal(mut masks: Vec<SubsetMask>) -> Vec<SubsetMask> {
    masks.sort_by_key(|m| m.bits());
    masks.dedup();
    let keep: Vec<bool> =
        masks.iter().map(|m| !masks.iter().any(|o| o != m && m.is_subset_of(o))).collect();
    masks.into_iter().zip(keep).filter(|(_, k)| *k).map(|(m, _)| m).collect()
}

/// Best feasible subset of `n` experts.
pub fn smo_select<O: Objective, F: Feasibility>(
    n: usize,
    objective: &O,
    feasibility: &F,
    config: &SmoConfig,
) -> Result<SmoOutcome> {
    config.validate()?;
    let memo = Memo::new(ByRef(objective));
    let eps = config.epsilon;
    let mut vertices = vec![SubsetMask::full(n)];
    let mut cbv = f64::NEG_INFINITY;
    let mut incumbent: Option<SubsetMask> = None;
    let mut trace = SmoTrace::default();

    for iteration in 1..=config.max_iterations {
        let values = vertices.par_iter().map(|&v| Ok((v, memo.value(v)?))).collect::<Result<Vec<_>>>()?;
        let live: Vec<(SubsetMask, f64)> = values.into_iter().filter(|&(_, v)| v > cbv + eps).collect();
        vertices = live.iter().map(|&(m, _)| m).collect();

        let Some((selected, selected_value)) = best_of(&live) else {
            trace.evaluations = memo.evaluations();
            return match incumbent {
                Some(mask) => Ok(SmoOutcome { mask, value: cbv, status: SmoStatus::EpsilonOptimal, trace }),
                None => Err(Error::Infeasible("no nonempty subset satisfies the constraints".into())),
            };
        };

        let proj = projection_pi_g(selected, &memo, feasibility)?;
        let mut step = SmoStep {
            iteration,
            vertices: vertices.len(),
            selected,
            selected_value,
            projection: proj.feasible,
            cbv: None,
        };
        if proj.feasible == Some(selected) {
            if selected_value > cbv || incumbent.is_none() {
                cbv = selected_value;
                incumbent = Some(selected);
            }
            step.cbv = incumbent.map(|_| cbv);
            trace.steps.push(step);
            trace.evaluations = memo.evaluations();
            debug!(iteration, mask = %selected, "fixed point");
            let mask = incumbent.expect("set above");
            return Ok(SmoOutcome { mask, value: cbv, status: SmoStatus::Optimal, trace });
        }
        if let Some(p) = proj.feasible {
            let v = memo.value(p)?;
            if v > cbv || (v == cbv && incumbent.map_or(true, |inc| p.tie_break_cmp(&inc).is_lt())) {
                cbv = v;
                incumbent = Some(p);
            }
        }
        step.cbv = incumbent.map(|_| cbv);
        trace.steps.push(step);

        let z = proj.last_infeasible.expect("infeasible vertex has an infeasible chain point");
        let mut next: Vec<SubsetMask> = vertices.iter().copied().filter(|&v| v != selected).collect();
        next.extend(z.members().map(|i| selected.without(i)).filter(|m| !m.is_empty()));
        vertices = maximal(next);
    }
    Err(Error::IterationLimit { iterations: config.max_iterations, best: incumbent.map(|m| (m, cbv)) })
}

/// Brute force over all `2^N - 1` subsets; ties to smaller popcount, then
/// the lexicographically smaller mask.
pub fn exhaustive_select<O: Objective, F: Feasibility>(n: usize, objective: &O, feasibility: &F) -> Result<(SubsetMask, f64)> {
    if n == 0 || n > EXHAUSTIVE_MAX_EXPERTS {
        return Err(Error::invalid(format!("exhaustive search supports 1..={EXHAUSTIVE_MAX_EXPERTS} experts, got {n}")));
    }
    let masks: Vec<SubsetMask> = SubsetMask::all_nonempty(n).collect();
    let scored = masks
        .par_iter()
        .map(|&m| Ok(if feasibility.is_feasible(m)? { Some((m, objective.value(m)?)) } else { None }))
        .collect::<Result<Vec<_>>>()?;
    let feasible: Vec<(SubsetMask, f64)> = scored.into_iter().flatten().collect();
    best_of(&feasible).ok_or_else(|| Error::Infeasible("no nonempty subset satisfies the constraints".into()))
}

/// SMO on a gating dataset and precomputed costs.
pub fn select_subset(
    data: &GatingDataset,
    theta: Option<&GatingParams>,
    costs: &CostTable,
    constraints: &ConstraintSet,
    config: &SmoConfig,
) -> Result<SmoOutcome> {
    let n = data.n_experts();
    let feas = CostFeasibility { table: costs, constraints };
    match config.objective {
        ObjectiveMode::Restricted => {
            let theta = theta.ok_or_else(|| Error::invalid("restricted objective needs gating parameters"))?;
            smo_select(n, &RestrictedGateObjective::new(theta, data)?, &feas, config)
        }
        ObjectiveMode::Tabular => smo_select(n, &TabularObjective { data }, &feas, config),
    }
}
