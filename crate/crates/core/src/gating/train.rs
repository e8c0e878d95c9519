use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::domain::SubsetMask;
use crate::error::{Error, Result};
use crate::gating::loss::{empirical_loss, loss_and_grad_flat, GatingDataset};
use crate::gating::mlp::{GatingArch, GatingParams};
use crate::rng::substream;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub decay_factor: f64,
    /// Epochs without improvement of the full loss before the rate decays.
    pub patience: usize,
    pub seed: u64,
    pub dropout: f64,
    pub arch: GatingArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 60,
            clip_norm: 1.0,
            decay_factor: 0.8,
            patience: 3,
            seed: 0,
            dropout: 0.0,
            arch: GatingArch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::invalid("decay factor must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if self.arch.hidden_dims.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: GatingParams,
    /// Full-dataset loss before training and after every epoch.
    pub epoch_losses: Vec<f64>,
    /// Mini-batch loss at every optimizer step.
    pub step_losses: Vec<f64>,
    pub initial_loss: f64,
    /// Loss of the returned parameters (the best epoch, possibly the initial one).
    pub final_loss: f64,
    pub best_epoch: usize,
}

/// Mini-batch Adam descent on the empirical loss over `subset`, with global
/// gradient-norm clipping and plateau learning-rate decay.
pub fn train_gating(data: &GatingDataset, subset: SubsetMask, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    subset.require_nonempty()?;
    subset.require_len(data.n_experts())?;
    let mut init_rng = substream(config.seed, 0);
    let mut shuffle_rng = substream(config.seed, 1);
    let mut dropout_rng = substream(config.seed, 2);

    let mut theta = GatingParams::init(data.input_dim(), data.n_experts(), &config.arch, &mut init_rng);
    let initial_loss = empirical_loss(&theta, subset, data)?;
    if !initial_loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, detail: format!("initial loss {initial_loss}") });
    }

    let np = theta.n_params();
    let mut flat = theta.flatten();
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let mut step = 0i32;
    let mut lr = config.learning_rate;
    let mut best = (initial_loss, theta.clone(), 0);
    let mut stale = 0;
    let mut epoch_losses = vec![initial_loss];
    let mut step_losses = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            let dropout = (config.dropout > 0.0).then_some((config.dropout, &mut dropout_rng));
            let (loss, mut grad) = loss_and_grad_flat(&theta, subset, data, batch, dropout)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, detail: format!("non-finite batch loss {loss}") });
            }
            step_losses.push(loss);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > config.clip_norm {
                let s = config.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(step);
            let c2 = 1.0 - ADAM_BETA2.powi(step);
            for k in 0..np {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
                flat[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
            theta.set_flat(&flat)?;
        }
        let full = empirical_loss(&theta, subset, data)?;
        if !full.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("non-finite loss {full}") });
        }
        epoch_losses.push(full);
        if full < best.0 {
            best = (full, theta.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                lr *= config.decay_factor;
                stale = 0;
            }
        }
        debug!(epoch, loss = full, lr, "gating epoch");
    }
    let (final_loss, params, best_epoch) = best;
    Ok(TrainOutcome { params, epoch_losses, step_losses, initial_loss, final_loss, best_epoch })
}
