//! Deterministic mini-batch gradient descent on the combined objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sae::grad::backward;
use crate::sae::loss::{evaluate_batch, BatchLayout, LossBreakdown, SimMode};
use crate::sae::SaeModel;
use crate::sparse::DenseTokenBag;

/// One (query, positive, negatives) supervision unit. Pairs with no explicit
/// negatives lean on in-batch negatives.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub query: DenseTokenBag,
    pub positive: DenseTokenBag,
    pub negatives: Vec<DenseTokenBag>,
}

/// Training hyperparameters. Defaults follow the controlled-setup recipe:
/// K=32, k_aux=2048, alpha=1/32, beta=0.1, gamma=0.05, lr=1e-3, batch 64,
/// 2 epochs, 20000 warmup steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub k_aux: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    /// Tokens without activation before a neuron counts as dead.
    pub dead_threshold: u64,
    pub temperature: f64,
    pub seed: u64,
    pub supervised_mode: SimMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 32,
            k_aux: 2048,
            alpha: 0.03125,
            beta: 0.1,
            gamma: 0.05,
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 2,
            warmup_steps: 20000,
            dead_threshold: 10_000,
            temperature: 1.0,
            seed: 0,
            supervised_mode: SimMode::Token,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &SaeModel) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::invalid_config("loss weights must be >= 0"));
        }
        if self.k == 0 || self.k > model.hidden_dim() {
            return Err(Error::invalid_config(format!(
                "k={} out of range 1..={}",
                self.k,
                model.hidden_dim()
            )));
        }
        if self.k_aux == 0 {
            return Err(Error::invalid_config("k_aux must be >= 1"));
        }
        if self.temperature <= 0.0 || self.temperature.is_nan() {
            return Err(Error::invalid_config("temperature must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_config("batch_size must be >= 1"));
        }
        if self.learning_rate < 0.0 || self.learning_rate.is_nan() {
            return Err(Error::invalid_config("learning_rate must be >= 0"));
        }
        Ok(())
    }
}

/// Mean loss breakdown over one epoch's steps.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub mean: LossBreakdown,
}

/// Trains a copy of `initial` with plain gradient descent under linear
/// learning-rate warmup. Deterministic given (initial model, pairs, config):
/// pair order is shuffled by a seeded generator, gradients are analytic with
/// TopK masks frozen per forward pass, and neuron activity counters reset
/// whenever a neuron appears in any token's main selection.
pub fn train(
    initial: &SaeModel,
    pairs: &[TrainingPair],
    config: &TrainConfig,
) -> Result<(SaeModel, Vec<EpochStats>)> {
    if pairs.is_empty() {
        return Err(Error::invalid_argument("training set must be non-empty"));
    }
    let mut model = initial.clone();
    config.validate(&model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let h = model.hidden_dim();
    let mut step = 0usize;
    let mut stats = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown {
            reconstruction: 0.0,
            auxiliary: 0.0,
            contrastive: 0.0,
            supervised: 0.0,
            total: 0.0,
        };
        let mut steps_in_epoch = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let layout = BatchLayout::build(&model, chunk.iter().map(|&i| &pairs[i]))?;
            let eval = evaluate_batch(&model, &layout, config)?;
            if !eval.breakdown.total.is_finite() {
                return Err(Error::TrainingDiverged { step });
            }
            let grads = backward(&model, &layout, config, &eval);
            let lr = if config.warmup_steps > 0 {
                config.learning_rate * ((step + 1) as f64 / config.warmup_steps as f64).min(1.0)
            } else {
                config.learning_rate
            };
            let mut active = vec![false; h];
            for fwd in &eval.fwds {
                for &u in &fwd.main.ids {
                    active[u as usize] = true;
                }
            }
            model.apply_gradients(&grads, lr);
            model.bump_activity(&active, eval.fwds.len() as u64);

            sums.reconstruction += eval.breakdown.reconstruction;
            sums.auxiliary += eval.breakdown.auxiliary;
            sums.contrastive += eval.breakdown.contrastive;
            sums.supervised += eval.breakdown.supervised;
            sums.total += eval.breakdown.total;
            step += 1;
            steps_in_epoch += 1;
        }
        let inv = 1.0 / steps_in_epoch as f64;
        stats.push(EpochStats {
            epoch,
            steps: steps_in_epoch,
            mean: LossBreakdown {
                reconstruction: sums.reconstruction * inv,
                auxiliary: sums.auxiliary * inv,
                contrastive: sums.contrastive * inv,
                supervised: sums.supervised * inv,
                total: sums.total * inv,
            },
        });
    }
    Ok((model, stats))
}
