use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{Prompt, Workload};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, SimRng};
use crate::synth::TokenModel;

/// Recipe for a clustered synthetic workload. Embeddings come from an
/// isotropic Gaussian mixture with uniform mixing weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub n_prompts: usize,
    pub embedding_dim: usize,
    pub k_clusters: usize,
    /// `K x d`; drawn as `N(0, center_scale^2)` when absent.
    pub cluster_centers: Option<Vec<Vec<f64>>>,
    pub center_scale: f64,
    pub cluster_spread: f64,
    /// Inclusive `[T_min, T_max]`.
    pub answer_length_range: [usize; 2],
    /// Inclusive, uniform.
    pub prompt_length_range: [usize; 2],
    pub n_app_classes: usize,
    /// Cluster -> application class; `k % n_app_classes` when empty.
    pub app_class_map: Vec<usize>,
    pub vocab_size: usize,
    pub bytes_per_prompt_token: f64,
    pub noise_focus: f64,
    /// When set, every answer ends with this token and no earlier position uses it.
    pub stop_token: Option<usize>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            n_prompts: 1000,
            embedding_dim: 32,
            k_clusters: 8,
            cluster_centers: None,
            center_scale: 1.0,
            cluster_spread: 1.0,
            answer_length_range: [1, 4],
            prompt_length_range: [32, 224],
            n_app_classes: 2,
            app_class_map: Vec::new(),
            vocab_size: 64,
            bytes_per_prompt_token: 4.0,
            noise_focus: 0.35,
            stop_token: None,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.n_prompts == 0 {
            return bad("workload needs at least one prompt".into());
        }
        if self.k_clusters == 0 || self.embedding_dim == 0 {
            return bad("need K >= 1 clusters and embedding dimension >= 1".into());
        }
        if !(self.cluster_spread > 0.0) {
            return bad(format!("cluster spread {} must be positive", self.cluster_spread));
        }
        let [tmin, tmax] = self.answer_length_range;
        if tmin < 1 || tmax < tmin {
            return bad(format!("answer length range [{tmin}, {tmax}] invalid"));
        }
        let [lmin, lmax] = self.prompt_length_range;
        if lmin < 1 || lmax < lmin {
            return bad(format!("prompt length range [{lmin}, {lmax}] invalid"));
        }
        if self.n_app_classes == 0 {
            return bad("need at least one application class".into());
        }
        if !self.app_class_map.is_empty() {
            if self.app_class_map.len() != self.k_clusters {
                return bad("app_class_map must have one entry per cluster".into());
            }
            if self.app_class_map.iter().any(|&m| m >= self.n_app_classes) {
                return bad("app_class_map entry outside class range".into());
            }
            for m in 0..self.n_app_classes {
                if !self.app_class_map.contains(&m) {
                    return bad(format!("application class {m} has no cluster"));
                }
            }
        } else if self.n_app_classes > self.k_clusters {
            return bad("more application classes than clusters".into());
        }
        if let Some(c) = &self.cluster_centers {
            if c.len() != self.k_clusters || c.iter().any(|row| row.len() != self.embedding_dim) {
                return bad("cluster_centers must be K x d".into());
            }
        }
        if !(self.bytes_per_prompt_token > 0.0) {
            return bad("bytes_per_prompt_token must be positive".into());
        }
        if let Some(s) = self.stop_token {
            if s >= self.vocab_size {
                return bad(format!("stop token {s} outside vocabulary"));
            }
        }
        TokenModel { vocab_size: self.vocab_size, noise_seed: 0, noise_focus: self.noise_focus }.validate()
    }

    pub fn app_class_of(&self, cluster: usize) -> usize {
        if self.app_class_map.is_empty() {
            cluster % self.n_app_classes
        } else {
            self.app_class_map[cluster]
        }
    }
}

/// Ground-truth token for `(cluster, position)`: the argmax of a fixed random
/// peaked distribution, so it is just a keyed uniform draw.
fn truth_token(answer_seed: u64, cluster: usize, position: usize, vocab: usize, stop: Option<usize>) -> usize {
    let mut rng = keyed_rng(answer_seed, &[cluster as u64, position as u64]);
    match stop {
        None => rng.gen_range(0..vocab),
        Some(s) => {
            let t = rng.gen_range(0..vocab - 1);
            if t >= s {
                t + 1
            } else {
                t
            }
        }
    }
}

pub fn generate_workload(spec: &WorkloadSpec, rng: &mut SimRng) -> Result<Workload> {
    spec.validate()?;
    let k = spec.k_clusters;
    let d = spec.embedding_dim;
    let centers = match &spec.cluster_centers {
        Some(c) => c.clone(),
        None => (0..k)
            .map(|_| (0..d).map(|_| spec.center_scale * { let z: f64 = StandardNormal.sample(rng); z }).collect())
            .collect::<Vec<Vec<f64>>>(),
    };
    let noise_seed: u64 = rng.gen();
    let answer_seed: u64 = rng.gen();

    let mut prompts = Vec::with_capacity(spec.n_prompts);
    for id in 0..spec.n_prompts {
        let cluster = rng.gen_range(0..k);
        let embedding = centers[cluster]
            .iter()
            .map(|&c| {
                let z: f64 = StandardNormal.sample(rng);
                c + spec.cluster_spread * z
            })
            .collect();
        let len = rng.gen_range(spec.prompt_length_range[0]..=spec.prompt_length_range[1]);
        let t = rng.gen_range(spec.answer_length_range[0]..=spec.answer_length_range[1]);
        let mut answer: Vec<usize> = (1..=t)
            .map(|pos| truth_token(answer_seed, cluster, pos, spec.vocab_size, spec.stop_token))
            .collect();
        if let Some(s) = spec.stop_token {
            answer[t - 1] = s;
        }
        prompts.push(Prompt {
            id,
            embedding,
            app_class: spec.app_class_of(cluster),
            cluster_label: cluster,
            prompt_length_tokens: len,
            data_size_bytes: len as f64 * spec.bytes_per_prompt_token,
            answer,
        });
    }
    let workload = Workload {
        n_clusters: k,
        n_app_classes: spec.n_app_classes,
        token_model: TokenModel { vocab_size: spec.vocab_size, noise_seed, noise_focus: spec.noise_focus },
        prompts,
    };
    workload.validate()?;
    Ok(workload)
}
