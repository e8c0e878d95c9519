//! Per-prompt free gating weights: the infinite-capacity limit of the gate.
//!
//! For a fixed prompt the loss `-Σ_t ln(Σ_n ω_n A_tn)` is convex in `ω` on
//! the simplex over `S`, so it can be minimised exactly. The solver runs
//! multiplicative (EM) updates from uniform weights until the Frank-Wolfe gap
//! vanishes, reads off the support, and re-solves from uniform weights on the
//! support alone. Two subsets sharing an optimal support therefore produce
//! bitwise-identical weights.

use crate::domain::SubsetMask;
use crate::error::{Error, Result};
use crate::gating::loss::{loss_with_weights, GatingDataset};
use crate::gating::weights::normalize_weights;

pub const GAP_TOL: f64 = 1e-13;
pub const SUPPORT_TOL: f64 = 1e-9;
const KKT_TOL: f64 = 1e-7;
const MAX_EM_ITERATIONS: usize = 200_000;

/// A strictly positive score vector per prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularGating {
    scores: Vec<Vec<f64>>,
}

impl TabularGating {
    pub fn new(scores: Vec<Vec<f64>>) -> Result<Self> {
        if scores.iter().flatten().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::invalid("tabular scores must be strictly positive"));
        }
        Ok(Self { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self, prompt: usize) -> &[f64] {
        &self.scores[prompt]
    }

    pub fn weights(&self, prompt: usize, s: SubsetMask) -> Result<Vec<f64>> {
        normalize_weights(&self.scores[prompt], s)
    }

    /// Mean loss over `data` using the table's weights restricted to `s`.
    pub fn empirical_loss(&self, s: SubsetMask, data: &GatingDataset) -> Result<f64> {
        if self.len() != data.len() {
            return Err(Error::Dimension { expected: data.len(), got: self.len() });
        }
        let mut total = 0.0;
        for i in 0..data.len() {
            total += loss_with_weights(&self.weights(i, s)?, data.targets(i));
        }
        Ok(total / data.len() as f64)
    }
}

/// Rows whose probabilities vanish on `s` contribute a constant and are dropped.
fn live_rows<'a>(targets: &'a [Vec<f64>], s: SubsetMask) -> Vec<&'a [f64]> {
    targets.iter().filter(|r| s.members().any(|n| r[n] > 0.0)).map(|r| r.as_slice()).collect()
}

/// `r_n = (1/T) Σ_t A_tn / F_t`; the gradient of the mean log-likelihood.
fn ratios(rows: &[&[f64]], w: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; w.len()];
    for row in rows {
        let f: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
        for (rn, a) in r.iter_mut().zip(row.iter()) {
            *rn += a / f;
        }
    }
    let t = rows.len() as f64;
    r.iter_mut().for_each(|x| *x /= t);
    r
}

fn uniform_on(s: SubsetMask) -> Vec<f64> {
    let k = s.count() as f64;
    (0..s.n()).map(|n| if s.contains(n) { 1.0 / k } else { 0.0 }).collect()
}

fn em_solve(targets: &[Vec<f64>], s: SubsetMask) -> (Vec<f64>, Vec<f64>) {
    let rows = live_rows(targets, s);
    let mut w = uniform_on(s);
    if rows.is_empty() {
        return (w.clone(), vec![1.0; w.len()]);
    }
    let mut r = ratios(&rows, &w);
    for _ in 0..MAX_EM_ITERATIONS {
        let gap = s.members().map(|n| r[n]).fold(f64::NEG_INFINITY, f64::max) - 1.0;
        if gap < GAP_TOL {
            break;
        }
        for n in s.members() {
            w[n] *= r[n];
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        r = ratios(&rows, &w);
    }
    (w, r)
}

/// Minimiser over the simplex on `s` of the teacher-forced loss of one
/// prompt. Returns a full-length vector, zero outside `s`.
pub fn tabular_optimal_weights(targets: &[Vec<f64>], s: SubsetMask) -> Result<Vec<f64>> {
    s.require_nonempty()?;
    let n = s.n();
    if targets.is_empty() || targets.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension { expected: n, got: targets.first().map_or(0, |r| r.len()) });
    }
    let (w, r) = em_solve(targets, s);
    let mut support = SubsetMask::empty(n);
    for i in s.members() {
        if w[i] > SUPPORT_TOL || r[i] > 1.0 + KKT_TOL {
            support = support.with(i);
        }
    }
    if support.is_empty() {
        support = s;
    }
    Ok(em_solve(targets, support).0)
}

/// `min` over the simplex on `s` of one prompt's loss.
pub fn tabular_prompt_loss(targets: &[Vec<f64>], s: SubsetMask) -> Result<f64> {
    Ok(loss_with_weights(&tabular_optimal_weights(targets, s)?, targets))
}

/// `L*(S)`: mean over the dataset of per-prompt optimal losses.
pub fn tabular_optimal_loss(data: &GatingDataset, s: SubsetMask) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        total += tabular_prompt_loss(data.targets(i), s)?;
    }
    Ok(total / data.len() as f64)
}

/// Optimal weights over `s` for every prompt, floored to stay positive.
pub fn tabular_optimum(data: &GatingDataset, s: SubsetMask) -> Result<TabularGating> {
    let scores = (0..data.len())
        .map(|i| Ok(tabular_optimal_weights(data.targets(i), s)?.into_iter().map(|w| w.max(f64::MIN_POSITIVE)).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    TabularGating::new(scores)
}
