use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::bptt::{loss_and_gradients, Sample};
use super::model::{LstmModel, TrainMeta};
use super::params::LstmParams;
use crate::error::{Error, Result};
use crate::features::{WindowDataset, N_FEATURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            batch_size: 32,
            hidden: 100,
            adam: AdamConfig::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden", "must be >= 1"));
        }
        self.adam.validate()
    }
}

/// Passed to the progress callback after every epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochReport {
    pub epoch: usize,
    pub epochs: usize,
    /// Sample-count-weighted mean of the batch losses.
    pub loss: f64,
}

pub fn train(dataset: &WindowDataset, config: &TrainConfig) -> Result<LstmModel> {
    train_with_progress(dataset, config, |_| {})
}

/// Trains from a fresh initialization drawn from `config.seed`.
pub fn train_with_progress(
    dataset: &WindowDataset,
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochReport),
) -> Result<LstmModel> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let len = dataset.windows[0].data.len();
    if len == 0 || len % N_FEATURES != 0 {
        return Err(Error::ShapeMismatch {
            what: "window (flattened rows)",
            expected: N_FEATURES * (len / N_FEATURES).max(1),
            found: len,
        });
    }
    for w in &dataset.windows {
        if !(w.weight.is_finite() && w.weight >= 0.0) {
            return Err(Error::invalid("weight", format!("must be finite and >= 0, got {}", w.weight)));
        }
        if w.label > 1 {
            return Err(Error::invalid("label", format!("must be 0 or 1, got {}", w.label)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = LstmParams::init(config.hidden, N_FEATURES, &mut rng);
    let mut adam = Adam::new(config.adam, params.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let batch: Vec<Sample> = idx
                .iter()
                .map(|&i| {
                    let w = &dataset.windows[i];
                    Sample {
                        window: &w.data,
                        label: w.label as f64,
                        weight: w.weight,
                    }
                })
                .collect();
            let (loss, grads) = loss_and_gradients(&params, &batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            adam.step(&mut params, &grads);
            total += loss * batch.len() as f64;
        }
        let loss = total / dataset.len() as f64;
        if !params.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        log::debug!("epoch {}/{} loss {:.6}", epoch + 1, config.epochs, loss);
        epoch_loss.push(loss);
        progress(&EpochReport {
            epoch: epoch + 1,
            epochs: config.epochs,
            loss,
        });
    }

    Ok(LstmModel {
        params,
        scaler: dataset.scaler.clone(),
        window: len / N_FEATURES,
        meta: TrainMeta {
            config: config.clone(),
            samples: dataset.len(),
            positive_fraction: dataset.positive_fraction(),
            epoch_loss,
        },
    })
}
