//! Per-prompt top-k expert selection and autoregressive answer generation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{cost_breakdown, CostBreakdown, CostParams};
use crate::domain::{Fleet, History, Prompt, SubsetMask, VocabDistribution};
use crate::error::{Error, Result};
use crate::gating::{fuse_distributions, normalize_weights, positive_scores, GatingParams};
use crate::rng::keyed_rng;
use crate::synth::TokenModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DecodeMode {
    Greedy,
    /// Draw from the fused distribution; the stream is keyed by seed and prompt id.
    Sampled { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub k: usize,
    pub mode: DecodeMode,
    /// Upper bound on generated tokens; the target length when absent.
    pub max_tokens: Option<usize>,
    pub stop_token: Option<usize>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { k: 2, mode: DecodeMode::Greedy, max_tokens: None, stop_token: None }
    }
}

/// `Γ`: the `k` members of `s` with the largest scores, in descending score
/// order, ties to the smaller id.
pub fn top_k_select(scores: &[f64], s: SubsetMask, k: usize) -> Result<Vec<usize>> {
    s.require_nonempty()?;
    s.require_len(scores.len())?;
    if k == 0 || k > s.count() {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={}", s.count())));
    }
    let mut members = s.member_vec();
    members.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    members.truncate(k);
    Ok(members)
}

/// `Γ` and its weights `g_n / Σ_{n' ∈ Γ} g_n'`, aligned.
pub fn top_k_weights(scores: &[f64], s: SubsetMask, k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let gamma = top_k_select(scores, s, k)?;
    let mask = SubsetMask::from_members(scores.len(), &gamma)?;
    let w = normalize_weights(scores, mask)?;
    let aligned = gamma.iter().map(|&n| w[n]).collect();
    Ok((gamma, aligned))
}

/// Positive gate scores of `θ` at `x`.
pub fn gate_scores(theta: &GatingParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(positive_scores(&theta.forward(x)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub prompt_id: usize,
    pub tokens: Vec<usize>,
    /// Queried experts `Γ`, in descending gate order.
    pub experts: Vec<usize>,
    pub weights: Vec<f64>,
    /// Costs charged to `Γ` over the realised length.
    pub costs: CostBreakdown,
    /// The same costs had every member of `S` been queried.
    pub subset_mean_delay: f64,
    pub subset_mean_energy: f64,
}

/// Decodes with fixed experts and weights.
#[allow(clippy::too_many_arguments)]
pub fn generate_with_weights(
    experts: &[usize],
    weights: &[f64],
    audit: SubsetMask,
    prompt: &Prompt,
    fleet: &Fleet,
    model: &TokenModel,
    params: &CostParams,
    config: &InferenceConfig,
) -> Result<Generation> {
    if experts.is_empty() || experts.len() != weights.len() {
        return Err(Error::Dimension { expected: experts.len(), got: weights.len() });
    }
    let limit = config.max_tokens.unwrap_or(usize::MAX).min(prompt.answer_len());
    if limit == 0 {
        return Err(Error::invalid("max_tokens must be positive"));
    }
    let mut rng = match config.mode {
        DecodeMode::Sampled { seed } => Some(keyed_rng(seed, &[prompt.id as u64])),
        DecodeMode::Greedy => None,
    };
    let mut history = History::new(prompt);
    while history.generated.len() < limit {
        let t = history.next_step();
        let dists = experts
            .iter()
            .map(|&n| model.next_token_dist(fleet.get(n), prompt, t))
            .collect::<Result<Vec<VocabDistribution>>>()?;
        let refs: Vec<&VocabDistribution> = dists.iter().collect();
        let fused = fuse_distributions(weights, &refs)?;
        let token = match rng.as_mut() {
            None => fused.argmax(),
            Some(r) => sample(&fused, r.gen::<f64>()),
        };
        history.push(token);
        if config.stop_token == Some(token) {
            break;
        }
    }
    let len = history.generated.len();
    let gamma = SubsetMask::from_members(fleet.len(), experts)?;
    let costs = cost_breakdown(prompt, gamma, fleet, params, len)?;
    let full = cost_breakdown(prompt, audit, fleet, params, len)?;
    Ok(Generation {
        prompt_id: prompt.id,
        tokens: history.generated,
        experts: experts.to_vec(),
        weights: weights.to_vec(),
        costs,
        subset_mean_delay: full.mean_delay,
        subset_mean_energy: full.mean_energy,
    })
}

/// Inverse-CDF draw; `u` in `[0, 1)`.
fn sample(dist: &VocabDistribution, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Gate once, keep the top `k` of `s`, fuse per step and decode.
pub fn generate_answer(
    theta: &GatingParams,
    s: SubsetMask,
    prompt: &Prompt,
    fleet: &Fleet,
    model: &TokenModel,
    params: &CostParams,
    config: &InferenceConfig,
) -> Result<Generation> {
    let scores = gate_scores(theta, &prompt.embedding)?;
    let (gamma, weights) = top_k_weights(&scores, s, config.k)?;
    generate_with_weights(&gamma, &weights, s, prompt, fleet, model, params, config)
}

/// Fraction of prompts whose output equals the target exactly.
pub fn score_accuracy(outputs: &[Vec<usize>], prompts: &[Prompt]) -> Result<f64> {
    if outputs.len() != prompts.len() {
        return Err(Error::Dimension { expected: prompts.len(), got: outputs.len() });
    }
    if prompts.is_empty() {
        return Err(Error::invalid("no prompts to score"));
    }
    let hits = outputs.iter().zip(prompts).filter(|(o, p)| **o == p.answer).count();
    Ok(hits as f64 / prompts.len() as f64)
}
