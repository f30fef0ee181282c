use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::method::{run_ascent, AscentMode, Evaluation, ProbeSet, UnlearnConfig, UnlearnReport};
use crate::data::VerticalDataset;
use crate::error::ensure;
use crate::protocol::{train, FederationSpec, SplitFederation, TrainConfig};
use crate::Result;

/// Fine-tuning and amnesiac schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairConfig {
    pub finetune_epochs: usize,
    pub finetune_learning_rate: f64,
    pub amnesiac_epochs: usize,
    pub amnesiac_learning_rate: f64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            finetune_epochs: 5,
            finetune_learning_rate: 0.01,
            amnesiac_epochs: 3,
            amnesiac_learning_rate: 0.01,
        }
    }
}

fn retained_rows(ds: &VerticalDataset, classes: &BTreeSet<usize>) -> Result<Vec<usize>> {
    let rows = ds.rows_in(classes, false);
    ensure!(!rows.is_empty(), Contract, "retained set is empty for unlearn classes {:?}", classes);
    Ok(rows)
}

fn constant_schedule(train_cfg: &TrainConfig, epochs: usize, learning_rate: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate,
        lr_decay: 1.0,
        ..train_cfg.clone()
    }
}

/// A fresh federation trained on `D_r` only, with the original schedule.
pub fn retrain(
    ds: &VerticalDataset,
    classes: &BTreeSet<usize>,
    spec: &FederationSpec,
    train_cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SplitFederation> {
    let rows = retained_rows(ds, classes)?;
    let mut fed = SplitFederation::new(spec, rng)?;
    train(&mut fed, ds, Some(&rows), train_cfg, rng)?;
    Ok(fed)
}

/// Descent on `D_r` only; returns the per-epoch losses.
pub fn finetune(
    fed: &mut SplitFederation,
    ds: &VerticalDataset,
    classes: &BTreeSet<usize>,
    repair: &RepairConfig,
    train_cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let rows = retained_rows(ds, classes)?;
    fed.reset_optimizers();
    let cfg = constant_schedule(train_cfg, repair.finetune_epochs, repair.finetune_learning_rate);
    train(fed, ds, Some(&rows), &cfg, rng)
}

/// Uniform random label different from `y`.
pub fn random_wrong_label<R: Rng + ?Sized>(y: usize, num_classes: usize, rng: &mut R) -> usize {
    loop {
        let c = rng.gen_range(0..num_classes);
        if c != y {
            return c;
        }
    }
}

/// Relabels `D_u` with random wrong labels and trains on `D_u ∪ D_r`.
pub fn amnesiac(
    fed: &mut SplitFederation,
    ds: &VerticalDataset,
    classes: &BTreeSet<usize>,
    repair: &RepairConfig,
    train_cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let c = ds.num_classes();
    ensure!(c >= 2, Contract, "amnesiac unlearning needs at least two classes");
    let labels = ds
        .labels()
        .iter()
        .map(|&y| if classes.contains(&y) { random_wrong_label(y, c, rng) } else { y })
        .collect();
    let relabeled = ds.relabeled(labels)?;
    fed.reset_optimizers();
    let cfg = constant_schedule(train_cfg, repair.amnesiac_epochs, repair.amnesiac_learning_rate);
    train(fed, &relabeled, None, &cfg, rng)
}

/// Plain gradient ascent on raw samples of `D_u`, with the same protocol,
/// optimizer, guard and early stop as [`super::unlearn`] but no mixup.
pub fn gradient_ascent(
    fed: &mut SplitFederation,
    samples: &ProbeSet,
    cfg: &UnlearnConfig,
    eval: &Evaluation,
    rng: &mut ChaCha8Rng,
) -> Result<UnlearnReport> {
    run_ascent(fed, samples, cfg, AscentMode::Plain, eval, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn wrong_labels_differ_and_reproduce() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for y in (0..1000).map(|i| i % 10) {
            let la = random_wrong_label(y, 10, &mut a);
            assert_ne!(la, y);
            assert_eq!(la, random_wrong_label(y, 10, &mut b));
        }
    }
}
