use crate::domain::{SubsetMask, VocabDistribution};
use crate::error::{Error, Result};

/// Raw scores are clamped to this range before exponentiation.
pub const SCORE_CLAMP: f64 = 30.0;

/// Elementwise `exp(clamp(raw, -30, 30))`.
pub fn positive_scores(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|r| r.clamp(-SCORE_CLAMP, SCORE_CLAMP).exp()).collect()
}

/// `ω_n = g_n / Σ_{n' ∈ S} g_n'` for `n ∈ S`, zero elsewhere. The result has
/// the length of `g`.
pub fn normalize_weights(g: &[f64], s: SubsetMask) -> Result<Vec<f64>> {
    s.require_nonempty()?;
    s.require_len(g.len())?;
    let total: f64 = s.members().map(|n| g[n]).sum();
    if !(total > 0.0) || s.members().any(|n| !(g[n] > 0.0)) {
        return Err(Error::invalid("gating scores must be strictly positive on the subset"));
    }
    Ok((0..g.len()).map(|n| if s.contains(n) { g[n] / total } else { 0.0 }).collect())
}

/// `F = Σ ω_i f_i` over paired weights and distributions.
pub fn fuse_distributions(weights: &[f64], dists: &[&VocabDistribution]) -> Result<VocabDistribution> {
    if weights.len() != dists.len() {
        return Err(Error::Dimension { expected: weights.len(), got: dists.len() });
    }
    let first = dists.first().ok_or(Error::EmptySubset)?;
    let v = first.len();
    let mut fused = vec![0.0; v];
    for (&w, d) in weights.iter().zip(dists) {
        if d.len() != v {
            return Err(Error::Dimension { expected: v, got: d.len() });
        }
        for (f, p) in fused.iter_mut().zip(d.probs()) {
            *f += w * p;
        }
    }
    VocabDistribution::new(fused)
}
