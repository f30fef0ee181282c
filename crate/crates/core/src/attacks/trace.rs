use serde::{Deserialize, Serialize};

use crate::data::VerticalDataset;
use crate::error::ensure;
use crate::numcore::{SgdConfig, Tensor};
use crate::protocol::SplitFederation;
use crate::{Error, Result};

/// Per-sample gradients `∂ℓ_i/∂H_k` seen by one passive party.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTrace {
    pub scenario: String,
    pub party_id: usize,
    /// Sample row in the traced dataset.
    pub indices: Vec<usize>,
    /// True labels, kept only for scoring the attack.
    pub labels: Option<Vec<usize>>,
    /// `[n × d_k]`.
    pub gradients: Tensor,
}

impl GradientTrace {
    pub fn new(
        scenario: String,
        party_id: usize,
        indices: Vec<usize>,
        labels: Option<Vec<usize>>,
        gradients: Tensor,
    ) -> Result<Self> {
        ensure!(gradients.shape().len() == 2, Shape, "gradients must be [n × d]");
        ensure!(
            indices.len() == gradients.rows(),
            Shape,
            "{} indices for {} gradient rows",
            indices.len(),
            gradients.rows()
        );
        if let Some(l) = &labels {
            ensure!(l.len() == indices.len(), Shape, "{} labels for {} samples", l.len(), indices.len());
        }
        Ok(Self {
            scenario,
            party_id,
            indices,
            labels,
            gradients,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.gradients.cols()
    }
}

/// Unlearning procedure whose gradient messages are observed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GradientHook {
    /// Ascent on the true labels.
    GradientAscent { learning_rate: f64 },
    /// Descent toward each sample's nearest wrong class.
    Boundary { learning_rate: f64 },
    /// Mixup rounds send gradients of mixed pairs, never of single samples.
    Mixup,
}

/// Runs one pass of `hook` over `samples` and records the gradient rows
/// party `party_id` receives, rescaled by the batch size so each row is the
/// gradient of that sample's own loss.
pub fn collect_unlearn_gradients(
    fed: &mut SplitFederation,
    samples: &VerticalDataset,
    hook: &GradientHook,
    party_id: usize,
    batch_size: usize,
    scenario: &str,
) -> Result<GradientTrace> {
    let cfg = match *hook {
        GradientHook::GradientAscent { learning_rate } => SgdConfig::ascent(learning_rate),
        GradientHook::Boundary { learning_rate } => SgdConfig::descent(learning_rate),
        GradientHook::Mixup => {
            return Err(Error::Contract(
                "mixup rounds transfer gradients of mixed pairs, not per-sample gradients".into(),
            ))
        }
    };
    cfg.validate()?;
    ensure!(batch_size >= 1, Contract, "batch_size must be at least 1");
    ensure!(!samples.is_empty(), Contract, "no samples to trace");
    let slot = fed
        .concat_order()
        .iter()
        .position(|&id| id == party_id)
        .ok_or_else(|| Error::Contract(format!("no passive party {party_id}")))?;
    fed.attach(samples)?;
    let n = samples.len();
    let dim = fed.passives()[slot].embedding_dim();
    let mut data = Vec::with_capacity(n * dim);
    let rows: Vec<usize> = (0..n).collect();
    for batch in rows.chunks(batch_size) {
        let targets = match hook {
            GradientHook::Boundary { .. } => boundary_targets(fed, samples, batch)?,
            _ => fed.active().one_hot(batch)?,
        };
        let msgs = fed.passive_forward_all(batch)?;
        let out = match fed.active_step(&msgs, &targets, &cfg) {
            Ok(o) => o,
            Err(e) => {
                fed.abort_round();
                return Err(e);
            }
        };
        let scale = batch.len() as f64;
        data.extend(out.replies[slot].payload.data().iter().map(|g| g * scale));
        fed.passive_backward_all(&out.replies, &cfg)?;
    }
    GradientTrace::new(
        scenario.to_string(),
        party_id,
        rows,
        Some(samples.labels().to_vec()),
        Tensor::matrix(n, dim, data)?,
    )
}

/// One-hot on the highest-scoring class other than the true one.
fn boundary_targets(fed: &SplitFederation, ds: &VerticalDataset, rows: &[usize]) -> Result<Tensor> {
    let logits = fed.dataset_logits(ds, rows)?;
    let c = fed.num_classes();
    let mut t = vec![0.0; rows.len() * c];
    for (i, &r) in rows.iter().enumerate() {
        let y = ds.labels()[r];
        let mut best = None;
        for (k, &v) in logits.row(i).iter().enumerate() {
            if k != y && best.map_or(true, |(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        let (k, _) = best.ok_or_else(|| Error::Contract("boundary targets need at least two classes".into()))?;
        t[i * c + k] = 1.0;
    }
    Tensor::matrix(rows.len(), c, t)
}
