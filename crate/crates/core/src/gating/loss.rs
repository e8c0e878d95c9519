use rayon::prelude::*;

use crate::domain::{Fleet, SubsetMask, Workload};
use crate::error::{Error, Result};
use crate::gating::mlp::GatingParams;
use crate::gating::weights::{normalize_weights, positive_scores, SCORE_CLAMP};
use crate::rng::SimRng;

/// Floor applied to the fused target probability before the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Gating inputs paired with teacher-forced target probabilities.
///
/// `targets[i][t][n]` is `f_{n, y_t}`: the probability expert `n` assigns
/// to the true token at step `t + 1` of prompt `i`, given the true prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct GatingDataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<Vec<f64>>>,
    n_experts: usize,
}

impl GatingDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Dimension { expected: inputs.len(), got: targets.len() });
        }
        let d = inputs[0].len();
        let n = targets[0].first().map(|r| r.len()).unwrap_or(0);
        if n == 0 {
            return Err(Error::invalid("targets need at least one step and one expert"));
        }
        for (x, rows) in inputs.iter().zip(&targets) {
            if x.len() != d {
                return Err(Error::Dimension { expected: d, got: x.len() });
            }
            if rows.is_empty() {
                return Err(Error::invalid("every prompt needs at least one answer token"));
            }
            for r in rows {
                if r.len() != n {
                    return Err(Error::Dimension { expected: n, got: r.len() });
                }
                if r.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::invalid("target probabilities must lie in [0,1]"));
                }
            }
        }
        Ok(Self { inputs, targets, n_experts: n })
    }

    /// Teacher-forced table for every prompt of `workload` and every expert.
    pub fn from_workload(workload: &Workload, fleet: &Fleet) -> Result<Self> {
        let targets = workload
            .prompts
            .par_iter()
            .map(|p| {
                (1..=p.answer_len())
                    .map(|t| {
                        fleet
                            .experts()
                            .iter()
                            .map(|e| Ok(workload.token_model.next_token_dist(e, p, t)?.prob(p.answer[t - 1])))
                            .collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let inputs = workload.prompts.iter().map(|p| p.embedding.clone()).collect();
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn targets(&self, i: usize) -> &[Vec<f64>] {
        &self.targets[i]
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            indices.iter().map(|&i| self.targets[i].clone()).collect(),
        )
    }
}

/// `-Σ_t ln max(Σ_n ω_n f_{n,y_t}, 1e-12)` for a full-length weight vector.
pub fn loss_with_weights(weights: &[f64], targets: &[Vec<f64>]) -> f64 {
    targets
        .iter()
        .map(|row| {
            let f: f64 = row.iter().zip(weights).map(|(a, w)| a * w).sum();
            -f.max(LOG_FLOOR).ln()
        })
        .sum()
}

/// Gate weights over `s` for input `x`.
pub fn gate_weights(theta: &GatingParams, s: SubsetMask, x: &[f64]) -> Result<Vec<f64>> {
    s.require_nonempty()?;
    s.require_len(theta.output_dim)?;
    normalize_weights(&positive_scores(&theta.forward(x)?), s)
}

/// Teacher-forced ensemble loss of one prompt; weights computed once from `x`.
pub fn sequence_loss(theta: &GatingParams, s: SubsetMask, x: &[f64], targets: &[Vec<f64>]) -> Result<f64> {
    let w = gate_weights(theta, s, x)?;
    if targets.iter().any(|r| r.len() != w.len()) {
        return Err(Error::Dimension { expected: w.len(), got: targets[0].len() });
    }
    Ok(loss_with_weights(&w, targets))
}

/// Mean `sequence_loss` over the dataset.
pub fn empirical_loss(theta: &GatingParams, s: SubsetMask, data: &GatingDataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    batch_loss(theta, s, data, &all)
}

pub fn batch_loss(theta: &GatingParams, s: SubsetMask, data: &GatingDataset, batch: &[usize]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let losses = batch
        .par_iter()
        .map(|&i| sequence_loss(theta, s, data.input(i), data.targets(i)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// Loss and flattened gradient (layout of [`GatingParams::flatten`]) of a
/// single prompt, optionally with dropout.
fn prompt_grad(
    theta: &GatingParams,
    s: SubsetMask,
    x: &[f64],
    targets: &[Vec<f64>],
    dropout: Option<(f64, &mut SimRng)>,
    grad: &mut [f64],
) -> Result<f64> {
    let cache = theta.forward_cached(x, dropout)?;
    let raw = &cache.output;
    let w = normalize_weights(&positive_scores(raw), s)?;
    let mut d_w = vec![0.0; w.len()];
    let mut loss = 0.0;
    for row in targets {
        let f: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
        loss -= f.max(LOG_FLOOR).ln();
        if f > LOG_FLOOR {
            for n in s.members() {
                d_w[n] -= row[n] / f;
            }
        }
    }
    // Softmax over S: dL/dr_n = ω_n (dL/dω_n - Σ_m ω_m dL/dω_m).
    let mean: f64 = s.members().map(|m| w[m] * d_w[m]).sum();
    let d_raw: Vec<f64> = (0..w.len())
        .map(|n| {
            if s.contains(n) && raw[n].abs() <= SCORE_CLAMP {
                w[n] * (d_w[n] - mean)
            } else {
                0.0
            }
        })
        .collect();
    theta.backward(&cache, &d_raw, grad);
    Ok(loss)
}

/// Mean loss and its gradient over `batch`, reduced in batch order.
pub(crate) fn loss_and_grad_flat(
    theta: &GatingParams,
    s: SubsetMask,
    data: &GatingDataset,
    batch: &[usize],
    dropout: Option<(f64, &mut SimRng)>,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    s.require_nonempty()?;
    s.require_len(theta.output_dim)?;
    let np = theta.n_params();
    let parts: Vec<(f64, Vec<f64>)> = match dropout {
        Some((p, rng)) if p > 0.0 => {
            let mut out = Vec::with_capacity(batch.len());
            for &i in batch {
                let mut g = vec![0.0; np];
                let l = prompt_grad(theta, s, data.input(i), data.targets(i), Some((p, &mut *rng)), &mut g)?;
                out.push((l, g));
            }
            out
        }
        _ => batch
            .par_iter()
            .map(|&i| {
                let mut g = vec![0.0; np];
                let l = prompt_grad(theta, s, data.input(i), data.targets(i), None, &mut g)?;
                Ok((l, g))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; np];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    for a in &mut grad {
        *a *= scale;
    }
    Ok((loss * scale, grad))
}

/// `∂/∂θ` of the mean loss over `batch`, shaped like `theta`.
pub fn loss_gradient(theta: &GatingParams, s: SubsetMask, data: &GatingDataset, batch: &[usize]) -> Result<GatingParams> {
    let (_, flat) = loss_and_grad_flat(theta, s, data, batch, None)?;
    let mut g = theta.clone();
    g.set_flat(&flat)?;
    Ok(g)
}
