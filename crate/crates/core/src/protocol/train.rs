use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::federation::SplitFederation;
use crate::data::VerticalDataset;
use crate::error::ensure;
use crate::numcore::SgdConfig;
use crate::Result;

/// Descent hyperparameters for the training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, Contract, "batch_size must be at least 1");
        ensure!(
            self.lr_decay > 0.0 && self.lr_decay <= 1.0,
            Contract,
            "lr_decay must lie in (0, 1], got {}",
            self.lr_decay
        );
        self.sgd(0).validate()
    }

    /// Descent config for `epoch` (0-based).
    pub fn sgd(&self, epoch: usize) -> SgdConfig {
        SgdConfig::descent(self.learning_rate * self.lr_decay.powi(epoch as i32))
            .with_momentum(self.momentum)
            .with_weight_decay(self.weight_decay)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub rounds: usize,
}

/// One shuffled pass over `rows` of `ds` (all rows when `None`).
pub fn train_epoch(
    fed: &mut SplitFederation,
    ds: &VerticalDataset,
    rows: Option<&[usize]>,
    batch_size: usize,
    cfg: &SgdConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    ensure!(batch_size >= 1, Contract, "batch_size must be at least 1");
    let mut order: Vec<usize> = match rows {
        Some(r) => r.to_vec(),
        None => (0..ds.len()).collect(),
    };
    ensure!(!order.is_empty(), Contract, "no rows to train on");
    order.shuffle(rng);
    fed.attach(ds)?;
    let mut total = 0.0;
    let mut rounds = 0;
    for batch in order.chunks(batch_size) {
        let targets = fed.active().one_hot(batch)?;
        total += fed.round(batch, &targets, cfg)?;
        rounds += 1;
    }
    Ok(EpochStats {
        mean_loss: total / rounds as f64,
        rounds,
    })
}

/// Runs `cfg.epochs` epochs; returns the mean loss of each.
pub fn train(
    fed: &mut SplitFederation,
    ds: &VerticalDataset,
    rows: Option<&[usize]>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    (0..cfg.epochs)
        .map(|e| train_epoch(fed, ds, rows, cfg.batch_size, &cfg.sgd(e), rng).map(|s| s.mean_loss))
        .collect()
}

/// Percentage of `rows` predicted correctly.
pub fn accuracy(fed: &SplitFederation, ds: &VerticalDataset, rows: &[usize]) -> Result<f64> {
    ensure!(!rows.is_empty(), Contract, "accuracy over an empty set");
    let pred = fed.predict_rows(ds, rows)?;
    let labels = ds.labels();
    let hits = pred.iter().zip(rows).filter(|(p, &r)| **p == labels[r]).count();
    Ok(100.0 * hits as f64 / rows.len() as f64)
}
