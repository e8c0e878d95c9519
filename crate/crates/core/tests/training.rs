mod common;

use moe2_core::gating::{empirical_loss, train_gating, TrainConfig};
use moe2_core::harness::{prepare_seed, ExperimentConfig};
use moe2_core::rng::seeded_rng;
use rayon::prelude::*;

use common::{random_mask, random_submask};

/// A gate trained on a superset should not end up meaningfully worse than
/// one trained on the subset; SGD is not exact, hence the slack.
#[test]
fn trained_loss_is_softly_monotone_in_subset() {
    let cfg = ExperimentConfig::default();
    let setup = prepare_seed(&cfg, 0).unwrap();
    let data = &setup.train_data;
    let n = data.n_experts();
    let mut rng = seeded_rng(77);
    let pairs: Vec<_> = (0..20)
        .map(|_| {
            let s = loop {
                let m = random_mask(n, &mut rng);
                if m.count() >= 2 {
                    break m;
                }
            };
            let sub = loop {
                let t = random_submask(s, &mut rng);
                if t != s {
                    break t;
                }
            };
            (s, sub)
        })
        .collect();
    let train = TrainConfig { epochs: 30, ..cfg.train.clone() };
    let gaps: Vec<f64> = pairs
        .par_iter()
        .map(|&(s, sub)| {
            let big = train_gating(data, s, &train).unwrap();
            let small = train_gating(data, sub, &train).unwrap();
            assert_eq!(big.final_loss, empirical_loss(&big.params, s, data).unwrap());
            big.final_loss - small.final_loss
        })
        .collect();
    let worst = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(worst <= 0.05, "worst L(S) - L(S') = {worst}, gaps {gaps:?}");
}

#[test]
fn training_never_returns_worse_than_initial() {
    let cfg = ExperimentConfig::default();
    let setup = prepare_seed(&cfg, 1).unwrap();
    let full = setup.fleet.full_mask();
    let out = train_gating(&setup.train_data, full, &TrainConfig { epochs: 3, ..cfg.train.clone() }).unwrap();
    assert!(out.final_loss <= out.initial_loss);
    assert_eq!(out.epoch_losses.len(), 4);
    assert_eq!(out.final_loss, out.epoch_losses[out.best_epoch]);
}
