//! Synthetic next-token distributions of the simulated experts.
//!
//! For expert `n`, prompt `x` in cluster `k` and step `t` with target token
//! `y_t`:
//!
//! ```text
//! c     = competence_n[k]
//! p     = sigmoid(sharpness_n * c)
//! peak  = p on y_t, (1 - p) / (V - 1) on every other token
//! noise = focus on d(x, t) + (1 - focus) * w(n, x, t)
//! f     = c * peak + (1 - c) * noise
//! ```
//!
//! `d(x, t)` is a distractor token shared by all experts (a common confusion
//! for that prompt and step) and `w(n, x, t)` is a normalized vector of
//! Exp(1) draws private to the expert. Both are pure functions of
//! `(noise_seed, ids, t)`, so the distribution is deterministic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ExpertProfile, Prompt, VocabDistribution};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

const DISTRACTOR_STREAM: u64 = 0;
const PRIVATE_NOISE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenModel {
    pub vocab_size: usize,
    pub noise_seed: u64,
    /// Share of the noise component placed on the shared distractor token.
    pub noise_focus: f64,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl TokenModel {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::invalid("vocabulary needs at least two tokens"));
        }
        if !(0.0..=1.0).contains(&self.noise_focus) {
            return Err(Error::invalid(format!("noise focus {} outside [0,1]", self.noise_focus)));
        }
        Ok(())
    }

    /// The keyed noise distribution for `(expert, prompt, t)`.
    pub fn noise(&self, expert_id: usize, prompt_id: usize, t: usize) -> Vec<f64> {
        let v = self.vocab_size;
        let distractor =
            keyed_rng(self.noise_seed, &[DISTRACTOR_STREAM, prompt_id as u64, t as u64]).gen_range(0..v);
        let mut rng = keyed_rng(
            self.noise_seed,
            &[PRIVATE_NOISE_STREAM, expert_id as u64, prompt_id as u64, t as u64],
        );
        let mut w: Vec<f64> = (0..v).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = w.iter().sum();
        for x in &mut w {
            *x = (1.0 - self.noise_focus) * *x / total;
        }
        w[distractor] += self.noise_focus;
        w
    }

    /// `f_n(h(x, t))` for step `t` in `1..=T`.
    pub fn next_token_dist(&self, expert: &ExpertProfile, prompt: &Prompt, t: usize) -> Result<VocabDistribution> {
        let len = prompt.answer_len();
        if t == 0 || t > len {
            return Err(Error::StepOutOfRange { step: t, len });
        }
        let v = self.vocab_size;
        let c = *expert
            .competence
            .get(prompt.cluster_label)
            .ok_or_else(|| Error::invalid(format!("expert {} has no competence for cluster {}", expert.id, prompt.cluster_label)))?;
        let target = prompt.answer[t - 1];
        let peak_mass = sigmoid(expert.sharpness * c);
        let rest = (1.0 - peak_mass) / (v - 1) as f64;
        let noise = self.noise(expert.id, prompt.id, t);
        let probs = noise
            .iter()
            .enumerate()
            .map(|(tok, &z)| {
                let peak = if tok == target { peak_mass } else { rest };
                c * peak + (1.0 - c) * z
            })
            .collect::<Vec<_>>();
        let sum: f64 = probs.iter().sum();
        VocabDistribution::new(probs.into_iter().map(|p| p / sum).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expert(competence: f64, sharpness: f64) -> ExpertProfile {
        ExpertProfile {
            id: 0,
            competence: vec![competence],
            sharpness,
            flops_per_token: 1.0,
            compute_capability: 1.0,
            mem_access_size: 0.0,
            mem_bandwidth: 1.0,
            overhead_seconds: 0.0,
            data_rate: 1.0,
            energy_base: 0.0,
            energy_per_context_token: 0.0,
        }
    }

    fn prompt(answer: Vec<usize>) -> Prompt {
        Prompt {
            id: 11,
            embedding: vec![0.0],
            app_class: 0,
            cluster_label: 0,
            prompt_length_tokens: 4,
            data_size_bytes: 16.0,
            answer,
        }
    }

    fn model() -> TokenModel {
        TokenModel { vocab_size: 64, noise_seed: 5, noise_focus: 0.35 }
    }

    #[test]
    fn sharp_competent_expert_concentrates_on_target() {
        let d = model().next_token_dist(&expert(1.0, 50.0), &prompt(vec![7, 9]), 2).unwrap();
        assert!(d.prob(9) > 0.99);
    }

    #[test]
    fn zero_competence_is_pure_noise() {
        let m = model();
        let e = expert(0.0, 3.0);
        let a = m.next_token_dist(&e, &prompt(vec![7]), 1).unwrap();
        let b = m.next_token_dist(&e, &prompt(vec![30]), 1).unwrap();
        assert_eq!(a, b);
        let noise = m.noise(0, 11, 1);
        for (x, y) in a.probs().iter().zip(&noise) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_and_normalized() {
        let m = model();
        let e = expert(0.4, 3.0);
        let p = prompt(vec![1, 2, 3]);
        for t in 1..=3 {
            let a = m.next_token_dist(&e, &p, t).unwrap();
            let b = m.next_token_dist(&e, &p, t).unwrap();
            assert_eq!(a, b);
            assert!((a.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn step_out_of_range() {
        let m = model();
        let e = expert(0.4, 3.0);
        assert!(matches!(m.next_token_dist(&e, &prompt(vec![1]), 2), Err(Error::StepOutOfRange { .. })));
        assert!(m.next_token_dist(&e, &prompt(vec![1]), 0).is_err());
    }
}
