//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfu::data::{synth_blobs, Split, VerticalDataset};
use vfu::numcore::{softmax_cross_entropy, Activation, DenseLayer, Mlp, Tensor};
use vfu::protocol::{FederationSpec, PassiveParty, SplitFederation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn blobs(classes: usize, per_class: usize, dim: usize, separation: f64, seed: u64, parties: usize) -> VerticalDataset {
    let ds = synth_blobs(classes, per_class, dim, separation, seed).unwrap();
    VerticalDataset::from_dataset(&ds, parties, Split::Train).unwrap()
}

pub fn spec(ds: &VerticalDataset, bottom_hidden: &[usize], embedding_dim: usize, top_hidden: &[usize]) -> FederationSpec {
    FederationSpec {
        input_widths: ds.widths(),
        bottom_hidden: bottom_hidden.to_vec(),
        embedding_dim,
        top_hidden: top_hidden.to_vec(),
        num_classes: ds.num_classes(),
    }
}

pub fn federation(ds: &VerticalDataset, embedding_dim: usize, top_hidden: &[usize], seed: u64) -> SplitFederation {
    let mut fed = SplitFederation::new(&spec(ds, &[], embedding_dim, top_hidden), &mut rng(seed)).unwrap();
    fed.attach(ds).unwrap();
    fed
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn linear(weights: Tensor, activation: Activation) -> DenseLayer {
    let out = weights.cols();
    DenseLayer::new(weights, Tensor::zeros(vec![out]), activation).unwrap()
}

/// Federation whose bottoms pass features through unchanged.
pub fn identity_federation(widths: &[usize], top: Mlp, num_classes: usize) -> SplitFederation {
    let passives = widths
        .iter()
        .enumerate()
        .map(|(k, &w)| PassiveParty::new(k + 1, Mlp::new(vec![linear(Tensor::identity(w), Activation::Identity)]).unwrap()))
        .collect();
    SplitFederation::from_parts(passives, top, (1..=widths.len()).collect(), num_classes).unwrap()
}

/// Mean cross-entropy of `rows` against one-hot labels, without side effects.
pub fn batch_loss(fed: &SplitFederation, ds: &VerticalDataset, rows: &[usize]) -> f64 {
    let logits = fed.dataset_logits(ds, rows).unwrap();
    let c = ds.num_classes();
    let mut t = vec![0.0; rows.len() * c];
    for (i, &r) in rows.iter().enumerate() {
        t[i * c + ds.labels()[r]] = 1.0;
    }
    softmax_cross_entropy(&logits, &Tensor::matrix(rows.len(), c, t).unwrap()).unwrap().0
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn params(fed: &SplitFederation) -> Vec<f64> {
    let mut out = Vec::new();
    for p in fed.passives() {
        for t in p.bottom().params() {
            out.extend_from_slice(t.data());
        }
    }
    for t in fed.active().top().params() {
        out.extend_from_slice(t.data());
    }
    out
}
