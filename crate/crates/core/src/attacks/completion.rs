use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::numcore::{softmax_cross_entropy, Activation, Mlp, Sgd, SgdConfig, Tensor};
use crate::protocol::PassiveParty;
use crate::Result;

/// Head trained by the adversary on frozen bottom embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionConfig {
    pub n_labeled: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            n_labeled: 200,
            hidden: vec![64],
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    /// Accuracy (%) on evaluation rows of the retained classes.
    pub retained: f64,
    /// Accuracy (%) on evaluation rows of the unlearned classes.
    pub forgotten: f64,
}

/// Passive model completion: party `party` embeds its own features with its
/// frozen bottom model and fits a fresh head on `labeled_x`/`labeled_y`.
pub fn model_completion_attack(
    party: &PassiveParty,
    labeled_x: &Tensor,
    labeled_y: &[usize],
    eval_x: &Tensor,
    eval_y: &[usize],
    unlearn_classes: &BTreeSet<usize>,
    num_classes: usize,
    cfg: &CompletionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CompletionResult> {
    let n = labeled_y.len();
    ensure!(n >= num_classes, Contract, "{} labeled samples for {} classes", n, num_classes);
    ensure!(labeled_x.rows() == n && eval_x.rows() == eval_y.len(), Shape, "features and labels disagree in length");
    ensure!(cfg.batch_size >= 1, Contract, "batch_size must be at least 1");
    let train_h = party.embed(labeled_x)?;
    let eval_h = party.embed(eval_x)?;

    let mut dims = vec![train_h.cols()];
    dims.extend(&cfg.hidden);
    dims.push(num_classes);
    let mut head = Mlp::glorot(&dims, Activation::Relu, Activation::Identity, rng)?;
    let sgd = SgdConfig::descent(cfg.learning_rate).with_momentum(cfg.momentum);
    let mut opt = Sgd::new();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let x = train_h.select_rows(batch)?;
            let mut t = vec![0.0; batch.len() * num_classes];
            for (i, &r) in batch.iter().enumerate() {
                t[i * num_classes + labeled_y[r]] = 1.0;
            }
            let (out, cache) = head.forward(&x)?;
            let (_, g) = softmax_cross_entropy(&out, &Tensor::matrix(batch.len(), num_classes, t)?)?;
            let (_, grads) = head.backward(&cache, &g)?;
            opt.step(&mut head, &grads, &sgd)?;
        }
    }

    let pred = head.infer(&eval_h)?.argmax_rows();
    let score = |inside: bool| {
        let (hit, tot) = pred
            .iter()
            .zip(eval_y)
            .filter(|(_, y)| unlearn_classes.contains(y) == inside)
            .fold((0usize, 0usize), |(h, t), (p, y)| (h + usize::from(p == y), t + 1));
        if tot == 0 {
            0.0
        } else {
            100.0 * hit as f64 / tot as f64
        }
    };
    Ok(CompletionResult {
        retained: score(false),
        forgotten: score(true),
    })
}
