//! Random instances shared by the integration tests.
#![allow(dead_code)]

use moe2_core::gating::{GatingArch, GatingDataset, GatingParams};
use moe2_core::rng::SimRng;
use moe2_core::synth::TokenModel;
use moe2_core::{ExpertProfile, Fleet, Prompt, SubsetMask, VocabDistribution, Workload};
use rand::Rng;

pub fn random_expert(id: usize, k: usize, rng: &mut SimRng) -> ExpertProfile {
    ExpertProfile {
        id,
        competence: (0..k).map(|_| rng.gen::<f64>()).collect(),
        sharpness: rng.gen_range(0.5..6.0),
        flops_per_token: rng.gen_range(1e9..1e10),
        compute_capability: rng.gen_range(1e11..3e12),
        mem_access_size: rng.gen_range(0.0..8e9),
        mem_bandwidth: rng.gen_range(1e10..5e10),
        overhead_seconds: rng.gen_range(0.0..0.1),
        data_rate: rng.gen_range(1e5..2e6),
        energy_base: rng.gen_range(0.0..3.0),
        energy_per_context_token: rng.gen_range(0.0..0.03),
    }
}

pub fn random_fleet(n: usize, k: usize, rng: &mut SimRng) -> Fleet {
    Fleet::new((0..n).map(|i| random_expert(i, k, rng)).collect()).unwrap()
}

/// Every class gets at least one prompt.
pub fn random_workload(prompts: usize, d: usize, k: usize, m: usize, v: usize, t_max: usize, rng: &mut SimRng) -> Workload {
    assert!(prompts >= m);
    let prompts = (0..prompts)
        .map(|id| {
            let len = rng.gen_range(1..300);
            Prompt {
                id,
                embedding: (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                app_class: if id < m { id } else { rng.gen_range(0..m) },
                cluster_label: rng.gen_range(0..k),
                prompt_length_tokens: len,
                data_size_bytes: 4.0 * len as f64,
                answer: (0..rng.gen_range(1..=t_max)).map(|_| rng.gen_range(0..v)).collect(),
            }
        })
        .collect();
    let w = Workload {
        n_clusters: k,
        n_app_classes: m,
        token_model: TokenModel { vocab_size: v, noise_seed: rng.gen(), noise_focus: rng.gen() },
        prompts,
    };
    w.validate().unwrap();
    w
}

/// Random nonempty mask over `n` experts.
pub fn random_mask(n: usize, rng: &mut SimRng) -> SubsetMask {
    loop {
        let bits = rng.gen::<u64>() & ((1u64 << n) - 1);
        if bits != 0 {
            return SubsetMask::from_bits(n, bits).unwrap();
        }
    }
}

/// Random nonempty proper-or-equal submask of `s`.
pub fn random_submask(s: SubsetMask, rng: &mut SimRng) -> SubsetMask {
    loop {
        let bits = s.bits() & rng.gen::<u64>();
        if bits != 0 {
            return SubsetMask::from_bits(s.n(), bits).unwrap();
        }
    }
}

pub fn random_distribution(v: usize, rng: &mut SimRng) -> VocabDistribution {
    let raw: Vec<f64> = (0..v).map(|_| rng.gen::<f64>().powi(3)).collect();
    let total: f64 = raw.iter().sum();
    VocabDistribution::new(raw.into_iter().map(|p| p / total).collect()).unwrap()
}

pub fn random_arch(rng: &mut SimRng) -> GatingArch {
    let depth = rng.gen_range(0..3);
    GatingArch {
        hidden_dims: (0..depth).map(|_| rng.gen_range(1..6)).collect(),
        negative_slope: rng.gen_range(0.0..0.5),
        residual: rng.gen(),
    }
}

/// Randomly initialised gate with its biases perturbed too.
pub fn random_params(d: usize, n: usize, rng: &mut SimRng) -> GatingParams {
    let arch = random_arch(rng);
    let mut theta = GatingParams::init(d, n, &arch, rng);
    let mut flat = theta.flatten();
    for x in flat.iter_mut() {
        *x += rng.gen_range(-0.3..0.3);
    }
    theta.set_flat(&flat).unwrap();
    theta
}

/// Teacher-forced targets in `(0, 1]`, with occasional near-zero entries.
pub fn random_targets(prompts: usize, n: usize, t_max: usize, rng: &mut SimRng) -> Vec<Vec<Vec<f64>>> {
    (0..prompts)
        .map(|_| {
            (0..rng.gen_range(1..=t_max))
                .map(|_| {
                    (0..n)
                        .map(|_| if rng.gen_bool(0.1) { rng.gen_range(1e-9..1e-3) } else { rng.gen_range(0.01..1.0) })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Small instance for exact tabular checks: `N ≤ 4`, `|D| ≤ 8`, `T ≤ 3`.
pub fn tabular_instance(rng: &mut SimRng) -> GatingDataset {
    let n = rng.gen_range(2..=4);
    let prompts = rng.gen_range(1..=8);
    let targets = random_targets(prompts, n, 3, rng);
    let inputs = (0..prompts).map(|_| vec![rng.gen::<f64>()]).collect();
    GatingDataset::new(inputs, targets).unwrap()
}
