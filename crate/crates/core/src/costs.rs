//! Delay and energy model of an expert ensemble and the feasibility test.

use serde::{Deserialize, Serialize};

use crate::domain::{ConstraintSet, ExpertProfile, Fleet, Prompt, SubsetMask, Workload};
use crate::error::{Error, Result};

/// Run-level cost constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    /// τ^gate, charged once per prompt.
    pub gate_delay: f64,
    /// Bytes sent up for every generated token after the first, and down for every token.
    pub token_payload_bytes: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { gate_delay: 0.005, token_payload_bytes: 4.0 }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_delay >= 0.0 && self.gate_delay.is_finite()) {
            return Err(Error::invalid("gate delay must be finite and nonnegative"));
        }
        if !(self.token_payload_bytes >= 0.0 && self.token_payload_bytes.is_finite()) {
            return Err(Error::invalid("token payload must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// `C_token(len)/C_cap + M_size/b + C_ovh` with `C_token` linear in context length.
pub fn compute_delay(expert: &ExpertProfile, context_length_tokens: usize) -> f64 {
    expert.flops_per_token * context_length_tokens as f64 / expert.compute_capability
        + expert.mem_access_size / expert.mem_bandwidth
        + expert.overhead_seconds
}

pub fn transmission_delay(expert: &ExpertProfile, data_size_bytes: f64) -> f64 {
    data_size_bytes / expert.data_rate
}

/// `τ_n(x, t)`: compute on the step-`t` context, uplink of the previous token
/// (the whole prompt at `t = 1`) and downlink of the token payload.
pub fn per_token_delay(expert: &ExpertProfile, prompt: &Prompt, t: usize, params: &CostParams) -> Result<f64> {
    if t == 0 {
        return Err(Error::StepOutOfRange { step: t, len: prompt.answer_len() });
    }
    let uplink = if t == 1 { prompt.data_size_bytes } else { params.token_payload_bytes };
    Ok(compute_delay(expert, prompt.prompt_length_tokens + t - 1)
        + transmission_delay(expert, uplink)
        + transmission_delay(expert, params.token_payload_bytes))
}

/// `E_n^comp` on a context of `len` tokens.
pub fn expert_token_energy(expert: &ExpertProfile, context_length_tokens: usize) -> f64 {
    expert.energy_base + expert.energy_per_context_token * context_length_tokens as f64
}

fn check(s: SubsetMask, fleet: &Fleet) -> Result<()> {
    s.require_nonempty()?;
    s.require_len(fleet.len())
}

/// `τ(x, S, t)`: the slowest member.
pub fn ensemble_token_delay(prompt: &Prompt, s: SubsetMask, t: usize, fleet: &Fleet, params: &CostParams) -> Result<f64> {
    check(s, fleet)?;
    let mut worst = f64::NEG_INFINITY;
    for n in s.members() {
        worst = worst.max(per_token_delay(fleet.get(n), prompt, t, params)?);
    }
    Ok(worst)
}

/// `E(x, S, t)`: summed over members.
pub fn token_energy(prompt: &Prompt, s: SubsetMask, t: usize, fleet: &Fleet) -> Result<f64> {
    check(s, fleet)?;
    if t == 0 {
        return Err(Error::StepOutOfRange { step: t, len: prompt.answer_len() });
    }
    let ctx = prompt.prompt_length_tokens + t - 1;
    Ok(s.members().map(|n| expert_token_energy(fleet.get(n), ctx)).sum())
}

/// Mean per-token delay over `len` generated tokens plus τ^gate.
pub fn mean_prompt_delay_over(prompt: &Prompt, s: SubsetMask, fleet: &Fleet, params: &CostParams, len: usize) -> Result<f64> {
    if len == 0 {
        return Err(Error::invalid("generation length must be positive"));
    }
    let mut sum = 0.0;
    for t in 1..=len {
        sum += ensemble_token_delay(prompt, s, t, fleet, params)?;
    }
    Ok(sum / len as f64 + params.gate_delay)
}

pub fn mean_prompt_energy_over(prompt: &Prompt, s: SubsetMask, fleet: &Fleet, len: usize) -> Result<f64> {
    if len == 0 {
        return Err(Error::invalid("generation length must be positive"));
    }
    let mut sum = 0.0;
    for t in 1..=len {
        sum += token_energy(prompt, s, t, fleet)?;
    }
    Ok(sum / len as f64)
}

/// `τ(x, S)` over the target length `T`.
pub fn mean_prompt_delay(prompt: &Prompt, s: SubsetMask, fleet: &Fleet, params: &CostParams) -> Result<f64> {
    mean_prompt_delay_over(prompt, s, fleet, params, prompt.answer_len())
}

/// `E(x, S)` over the target length `T`.
pub fn mean_prompt_energy(prompt: &Prompt, s: SubsetMask, fleet: &Fleet) -> Result<f64> {
    mean_prompt_energy_over(prompt, s, fleet, prompt.answer_len())
}

/// Per-step costs of one generation, as charged to the queried experts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// `expert_delays[t][i]` is the delay of the `i`-th queried expert at step `t + 1`.
    pub expert_delays: Vec<Vec<f64>>,
    pub token_delays: Vec<f64>,
    pub token_energies: Vec<f64>,
    pub mean_delay: f64,
    pub mean_energy: f64,
    pub gate_delay: f64,
}

pub fn cost_breakdown(prompt: &Prompt, s: SubsetMask, fleet: &Fleet, params: &CostParams, len: usize) -> Result<CostBreakdown> {
    check(s, fleet)?;
    let expert_delays = (1..=len)
        .map(|t| s.members().map(|n| per_token_delay(fleet.get(n), prompt, t, params)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let token_delays = (1..=len).map(|t| ensemble_token_delay(prompt, s, t, fleet, params)).collect::<Result<Vec<_>>>()?;
    let token_energies = (1..=len).map(|t| token_energy(prompt, s, t, fleet)).collect::<Result<Vec<_>>>()?;
    Ok(CostBreakdown {
        expert_delays,
        token_delays,
        token_energies,
        mean_delay: mean_prompt_delay_over(prompt, s, fleet, params, len)?,
        mean_energy: mean_prompt_energy_over(prompt, s, fleet, len)?,
        gate_delay: params.gate_delay,
    })
}

/// Workload-level expected costs: mean delay per application class and
/// overall mean energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCosts {
    pub class_delay: Vec<f64>,
    pub energy: f64,
}

fn aggregate(workload: &Workload, per_prompt: &[(f64, f64)]) -> Result<ExpectedCosts> {
    let m = workload.n_app_classes;
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    let mut energy = 0.0;
    for (p, &(d, e)) in workload.prompts.iter().zip(per_prompt) {
        sums[p.app_class] += d;
        counts[p.app_class] += 1;
        energy += e;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("application class {c} has no prompts")));
    }
    Ok(ExpectedCosts {
        class_delay: sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
        energy: energy / workload.prompts.len() as f64,
    })
}

pub fn expected_costs(workload: &Workload, s: SubsetMask, fleet: &Fleet, params: &CostParams) -> Result<ExpectedCosts> {
    check(s, fleet)?;
    let per_prompt = workload
        .prompts
        .iter()
        .map(|p| Ok((mean_prompt_delay(p, s, fleet, params)?, mean_prompt_energy(p, s, fleet)?)))
        .collect::<Result<Vec<_>>>()?;
    aggregate(workload, &per_prompt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub costs: ExpectedCosts,
    /// `τ_max,m - E[τ]_m`; negative when violated.
    pub delay_slack: Vec<f64>,
    /// `E_max - E[E]`.
    pub energy_slack: f64,
}

impl FeasibilityReport {
    fn new(costs: ExpectedCosts, constraints: &ConstraintSet) -> Result<Self> {
        if constraints.tau_max.len() != costs.class_delay.len() {
            return Err(Error::Dimension { expected: costs.class_delay.len(), got: constraints.tau_max.len() });
        }
        let delay_ok = costs.class_delay.iter().zip(&constraints.tau_max).all(|(d, t)| d <= t);
        let energy_ok = costs.energy <= constraints.e_max;
        let delay_slack = constraints.tau_max.iter().zip(&costs.class_delay).map(|(t, d)| t - d).collect();
        let energy_slack = constraints.e_max - costs.energy;
        Ok(Self { feasible: delay_ok && energy_ok, costs, delay_slack, energy_slack })
    }

    /// Names of violated constraints, for diagnostics.
    pub fn binding(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .delay_slack
            .iter()
            .enumerate()
            .filter(|(_, s)| **s < 0.0)
            .map(|(m, s)| format!("tau_max[{m}] exceeded by {}", -s))
            .collect();
        if self.energy_slack < 0.0 {
            out.push(format!("e_max exceeded by {}", -self.energy_slack));
        }
        out
    }
}

/// Both the delay region and the energy region must hold.
pub fn is_feasible(
    s: SubsetMask,
    constraints: &ConstraintSet,
    workload: &Workload,
    fleet: &Fleet,
    params: &CostParams,
) -> Result<FeasibilityReport> {
    FeasibilityReport::new(expected_costs(workload, s, fleet, params)?, constraints)
}

/// Per-(prompt, step, expert) costs, precomputed once so expected costs of
/// many masks are cheap. Results match [`expected_costs`] bit for bit.
#[derive(Clone, Debug)]
pub struct CostTable {
    /// `delay[i][t][n]`.
    delay: Vec<Vec<Vec<f64>>>,
    energy: Vec<Vec<Vec<f64>>>,
    classes: Vec<usize>,
    n_classes: usize,
    n_experts: usize,
    gate_delay: f64,
}

impl CostTable {
    pub fn new(workload: &Workload, fleet: &Fleet, params: &CostParams) -> Result<Self> {
        params.validate()?;
        let mut delay = Vec::with_capacity(workload.prompts.len());
        let mut energy = Vec::with_capacity(workload.prompts.len());
        for p in &workload.prompts {
            let mut dp = Vec::with_capacity(p.answer_len());
            let mut ep = Vec::with_capacity(p.answer_len());
            for t in 1..=p.answer_len() {
                let ctx = p.prompt_length_tokens + t - 1;
                dp.push(fleet.experts().iter().map(|e| per_token_delay(e, p, t, params)).collect::<Result<Vec<_>>>()?);
                ep.push(fleet.experts().iter().map(|e| expert_token_energy(e, ctx)).collect());
            }
            delay.push(dp);
            energy.push(ep);
        }
        Ok(Self {
            delay,
            energy,
            classes: workload.prompts.iter().map(|p| p.app_class).collect(),
            n_classes: workload.n_app_classes,
            n_experts: fleet.len(),
            gate_delay: params.gate_delay,
        })
    }

    pub fn expected_costs(&self, s: SubsetMask) -> Result<ExpectedCosts> {
        s.require_nonempty()?;
        s.require_len(self.n_experts)?;
        let members = s.member_vec();
        let mut sums = vec![0.0; self.n_classes];
        let mut counts = vec![0usize; self.n_classes];
        let mut energy = 0.0;
        for ((dp, ep), &m) in self.delay.iter().zip(&self.energy).zip(&self.classes) {
            let mut dsum = 0.0;
            let mut esum = 0.0;
            for (dt, et) in dp.iter().zip(ep) {
                dsum += members.iter().fold(f64::NEG_INFINITY, |a, &n| a.max(dt[n]));
                esum += members.iter().map(|&n| et[n]).sum::<f64>();
            }
            let len = dp.len() as f64;
            sums[m] += dsum / len + self.gate_delay;
            counts[m] += 1;
            energy += esum / len;
        }
        if let Some(c) = counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("application class {c} has no prompts")));
        }
        Ok(ExpectedCosts {
            class_delay: sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
            energy: energy / self.classes.len() as f64,
        })
    }

    pub fn is_feasible(&self, s: SubsetMask, constraints: &ConstraintSet) -> Result<FeasibilityReport> {
        FeasibilityReport::new(self.expected_costs(s)?, constraints)
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    /// Explains an infeasible instance; empty when some subset is feasible.
    ///
    /// Costs only grow with the subset, so the instance is infeasible exactly
    /// when every singleton is. A constraint that no single expert meets is
    /// named on its own; otherwise the singleton closest to feasibility is
    /// reported with what it violates.
    pub fn infeasibility_diagnostic(&self, constraints: &ConstraintSet) -> Result<Vec<String>> {
        let reports = (0..self.n_experts)
            .map(|i| self.is_feasible(SubsetMask::singleton(self.n_experts, i), constraints))
            .collect::<Result<Vec<_>>>()?;
        if reports.iter().any(|r| r.feasible) {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for (m, &limit) in constraints.tau_max.iter().enumerate() {
            let best = reports.iter().map(|r| r.costs.class_delay[m]).fold(f64::INFINITY, f64::min);
            if best > limit {
                out.push(format!("tau_max[{m}] = {limit}: fastest single expert averages {best}"));
            }
        }
        let best = reports.iter().map(|r| r.costs.energy).fold(f64::INFINITY, f64::min);
        if best > constraints.e_max {
            out.push(format!("e_max = {}: cheapest single expert averages {best}", constraints.e_max));
        }
        if out.is_empty() {
            let relative = |r: &FeasibilityReport| {
                let d: f64 = r.delay_slack.iter().zip(&constraints.tau_max).map(|(s, t)| (-s / t).max(0.0)).sum();
                d + (-r.energy_slack / constraints.e_max).max(0.0)
            };
            let (i, r) = reports
                .iter()
                .enumerate()
                .min_by(|a, b| relative(a.1).total_cmp(&relative(b.1)))
                .expect("fleet is nonempty");
            out.push(format!("constraints conflict jointly; closest is expert {i}: {}", r.binding().join(", ")));
        }
        Ok(out)
    }
}
