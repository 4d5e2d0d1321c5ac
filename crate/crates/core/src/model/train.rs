//! Mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{zero_all, zeros_like};
use super::{
    Adam, ClsEncoder, Example, LossCoefficients, LossWeights, ModelError, SpecModel, Vocab,
};
use crate::synthdata::LabeledSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds parameter initialization and batch shuffling.
    pub seed: u64,
    pub coefficients: LossCoefficients,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 42,
            coefficients: LossCoefficients::default(),
        }
    }
}

/// Mean batch losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub detection: f64,
    pub generation: f64,
    pub category: f64,
}

/// Encodes labeled samples with `vocab`.
pub fn prepare(samples: &[LabeledSample], vocab: &Vocab) -> Vec<Example> {
    samples
        .iter()
        .map(|s| Example {
            input: vocab.encode_input(&s.text),
            label: s.label,
            target: vocab.encode_target(&s.target),
            category: s.category.map(|c| c.index()),
        })
        .collect()
}

/// Trains `model` in place. Detection class weights are derived from the
/// label counts of `data`. `on_epoch` sees each epoch's log as it ends.
pub fn train<E: ClsEncoder>(
    model: &mut SpecModel<E>,
    data: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let n_pos = data.iter().filter(|e| e.label).count();
    let weights = LossWeights::from_counts(&[data.len() - n_pos, n_pos])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(model, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut grads = zeros_like(model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let batch_size = cfg.batch_size.max(1);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = EpochLog {
            epoch,
            loss: 0.0,
            detection: 0.0,
            generation: 0.0,
            category: 0.0,
        };
        let mut n_batches = 0usize;
        for (bi, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            zero_all(&mut grads);
            let parts = model.loss(&batch, &weights, &cfg.coefficients, Some(&mut grads))?;
            if !parts.total.is_finite() {
                return Err(ModelError::Divergence {
                    epoch,
                    batch: bi,
                    loss: parts.total,
                });
            }
            adam.step(model, &grads);
            sum.loss += parts.total;
            sum.detection += parts.detection;
            sum.generation += parts.generation;
            sum.category += parts.category;
            n_batches += 1;
        }
        let k = n_batches as f64;
        let log = EpochLog {
            epoch,
            loss: sum.loss / k,
            detection: sum.detection / k,
            generation: sum.generation / k,
            category: sum.category / k,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (detection {:.5}, generation {:.5}, category {:.5})",
            log.loss,
            log.detection,
            log.generation,
            log.category
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
