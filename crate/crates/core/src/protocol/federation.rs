use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::party::{ActiveParty, PassiveParty, RoundMessage};
use crate::data::VerticalDataset;
use crate::error::ensure;
use crate::numcore::{Activation, DenseLayer, Mlp, SgdConfig, Tensor};
use crate::parallel;
use crate::privacy::PrivacyConfig;
use crate::{Error, Result};

const PREDICT_CHUNK: usize = 512;

/// Layer sizes of a split model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederationSpec {
    /// Feature width of each passive party, in party-id order.
    pub input_widths: Vec<usize>,
    /// Hidden relu layers of every bottom model.
    pub bottom_hidden: Vec<usize>,
    /// Width of each party's forward embedding (identity activation).
    pub embedding_dim: usize,
    /// Hidden relu layers of the top model.
    pub top_hidden: Vec<usize>,
    pub num_classes: usize,
}

impl FederationSpec {
    pub fn bottom_dims(&self, party: usize) -> Vec<usize> {
        let mut dims = vec![self.input_widths[party]];
        dims.extend(&self.bottom_hidden);
        dims.push(self.embedding_dim);
        dims
    }

    pub fn top_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.embedding_dim * self.input_widths.len()];
        dims.extend(&self.top_hidden);
        dims.push(self.num_classes);
        dims
    }
}

/// Output of one active step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    /// Full `∂ℓ/∂H'` before any defense is applied.
    pub grad_joined: Tensor,
    pub replies: Vec<RoundMessage>,
}

/// The whole split model `Θ = (θ_1..θ_K, ω)`.
///
/// Passive parties are kept in concatenation order, which is ascending
/// party id unless built with [`SplitFederation::from_parts`].
#[derive(Clone, Debug)]
pub struct SplitFederation {
    pub(crate) active: ActiveParty,
    pub(crate) passives: Vec<PassiveParty>,
    concat_order: Vec<usize>,
    num_classes: usize,
    privacy: PrivacyConfig,
    defense_rng: ChaCha8Rng,
}

impl SplitFederation {
    /// Glorot-initialized federation; party ids are `1..=K`.
    pub fn new(spec: &FederationSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        ensure!(!spec.input_widths.is_empty(), Contract, "need at least one passive party");
        let mut passives = Vec::with_capacity(spec.input_widths.len());
        for k in 0..spec.input_widths.len() {
            let bottom = Mlp::glorot(&spec.bottom_dims(k), Activation::Relu, Activation::Identity, rng)?;
            passives.push(PassiveParty::new(k + 1, bottom));
        }
        let top = Mlp::glorot(&spec.top_dims(), Activation::Relu, Activation::Identity, rng)?;
        let order = (1..=spec.input_widths.len()).collect();
        Self::from_parts(passives, top, order, spec.num_classes)
    }

    /// Assembles a federation. `passives[i]` must be the party whose id is
    /// `concat_order[i]`.
    pub fn from_parts(passives: Vec<PassiveParty>, top: Mlp, concat_order: Vec<usize>, num_classes: usize) -> Result<Self> {
        let k = passives.len();
        ensure!(k >= 1, Contract, "need at least one passive party");
        let mut sorted = concat_order.clone();
        sorted.sort_unstable();
        ensure!(
            sorted == (1..=k).collect::<Vec<_>>(),
            Contract,
            "concat order {:?} is not a permutation of 1..={}",
            concat_order,
            k
        );
        for (p, &id) in passives.iter().zip(&concat_order) {
            ensure!(p.id() == id, Contract, "party {} placed in slot for party {}", p.id(), id);
        }
        let emb: usize = passives.iter().map(|p| p.embedding_dim()).sum();
        ensure!(
            emb == top.in_dim(),
            Shape,
            "embeddings sum to {} but top model expects {}",
            emb,
            top.in_dim()
        );
        Ok(Self {
            active: ActiveParty::new(top, num_classes, k)?,
            passives,
            concat_order,
            num_classes,
            privacy: PrivacyConfig::None,
            defense_rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    /// Installs a gradient defense with its own noise stream.
    pub fn with_privacy(mut self, privacy: PrivacyConfig, seed: u64) -> Result<Self> {
        privacy.validate()?;
        self.privacy = privacy;
        self.defense_rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self)
    }

    pub fn privacy(&self) -> &PrivacyConfig {
        &self.privacy
    }

    pub fn set_privacy(&mut self, privacy: PrivacyConfig, seed: u64) -> Result<()> {
        privacy.validate()?;
        self.privacy = privacy;
        self.defense_rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(())
    }

    pub fn num_parties(&self) -> usize {
        self.passives.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn concat_order(&self) -> &[usize] {
        &self.concat_order
    }

    pub fn active(&self) -> &ActiveParty {
        &self.active
    }

    pub fn active_mut(&mut self) -> &mut ActiveParty {
        &mut self.active
    }

    pub fn passives(&self) -> &[PassiveParty] {
        &self.passives
    }

    pub fn passives_mut(&mut self) -> &mut [PassiveParty] {
        &mut self.passives
    }

    /// Passive party by id.
    pub fn passive(&self, id: usize) -> Result<&PassiveParty> {
        self.passives
            .iter()
            .find(|p| p.id() == id)
            .ok_or_else(|| Error::Contract(format!("no passive party {id}")))
    }

    pub fn embedding_widths(&self) -> Vec<usize> {
        self.passives.iter().map(|p| p.embedding_dim()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.active.top().is_finite() && self.passives.iter().all(|p| p.bottom().is_finite())
    }

    pub fn reset_optimizers(&mut self) {
        self.active.reset_optimizer();
        for p in &mut self.passives {
            p.reset_optimizer();
        }
    }

    /// Hands shard `k` to party `k` and the labels to the active party.
    /// Shards are indexed by party id − 1.
    pub fn attach(&mut self, ds: &VerticalDataset) -> Result<()> {
        ensure!(
            ds.num_parties() == self.passives.len(),
            Shape,
            "dataset has {} shards for {} parties",
            ds.num_parties(),
            self.passives.len()
        );
        for p in &mut self.passives {
            p.attach(ds.shard(p.id() - 1).clone())?;
        }
        self.active.attach_labels(ds.labels_arc().clone())
    }

    /// Every passive party embeds `rows` (in parallel).
    pub fn passive_forward_all(&mut self, rows: &[usize]) -> Result<Vec<RoundMessage>> {
        parallel::map_mut(&mut self.passives, |p| p.forward(rows))
            .into_iter()
            .collect()
    }

    /// Every passive party applies its gradient message (in parallel).
    pub fn passive_backward_all(&mut self, replies: &[RoundMessage], cfg: &SgdConfig) -> Result<()> {
        ensure!(replies.len() == self.passives.len(), Contract, "{} replies for {} parties", replies.len(), self.passives.len());
        parallel::zip_mut(&mut self.passives, replies, |p, m| p.backward(m, cfg))
            .into_iter()
            .collect()
    }

    /// Active barrier: loss, `ω` update and gradient replies.
    pub fn active_step(&mut self, embeddings: &[RoundMessage], targets: &Tensor, cfg: &SgdConfig) -> Result<StepOutput> {
        let (loss, grad_joined, replies) = self.active.step(
            embeddings,
            &self.concat_order,
            targets,
            cfg,
            &self.privacy,
            &mut self.defense_rng,
        )?;
        Ok(StepOutput {
            loss,
            grad_joined,
            replies,
        })
    }

    /// One lock-step round on attached rows: forward (all K) → active step →
    /// backward (all K). Returns the batch loss.
    pub fn round(&mut self, rows: &[usize], targets: &Tensor, cfg: &SgdConfig) -> Result<f64> {
        let embeddings = self.passive_forward_all(rows)?;
        let out = match self.active_step(&embeddings, targets, cfg) {
            Ok(out) => out,
            Err(e) => {
                self.abort_round();
                return Err(e);
            }
        };
        self.passive_backward_all(&out.replies, cfg)?;
        Ok(out.loss)
    }

    pub fn abort_round(&mut self) {
        for p in &mut self.passives {
            p.abort_round();
        }
    }

    /// Top-model logits for per-party feature batches (indexed by party id − 1).
    pub fn logits(&self, batches: &[Tensor]) -> Result<Tensor> {
        ensure!(batches.len() == self.passives.len(), Shape, "{} batches for {} parties", batches.len(), self.passives.len());
        let embeddings = parallel::map(&self.passives, |p| p.embed(&batches[p.id() - 1]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        self.active.logits(&embeddings)
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn predict(&self, batches: &[Tensor]) -> Result<Vec<usize>> {
        Ok(self.logits(batches)?.argmax_rows())
    }

    /// Logits for selected rows of a dataset, chunked and evaluated in parallel.
    pub fn dataset_logits(&self, ds: &VerticalDataset, rows: &[usize]) -> Result<Tensor> {
        ensure!(!rows.is_empty(), Contract, "no rows to evaluate");
        let chunks: Vec<&[usize]> = rows.chunks(PREDICT_CHUNK).collect();
        let parts = parallel::map(&chunks, |chunk| {
            let batches = ds
                .shards()
                .iter()
                .map(|s| s.select_rows(chunk))
                .collect::<Result<Vec<_>>>()?;
            self.logits(&batches)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let c = self.num_classes;
        let data: Vec<f64> = parts.into_iter().flat_map(|t| t.into_data()).collect();
        Tensor::matrix(rows.len(), c, data)
    }

    pub fn predict_rows(&self, ds: &VerticalDataset, rows: &[usize]) -> Result<Vec<usize>> {
        Ok(self.dataset_logits(ds, rows)?.argmax_rows())
    }

    /// Same model with parties listed in `order`; the top model's first
    /// layer rows are permuted to match, so predictions are unchanged.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let mut slots = Vec::with_capacity(order.len());
        for &id in order {
            let pos = self
                .concat_order
                .iter()
                .position(|&x| x == id)
                .ok_or_else(|| Error::Contract(format!("unknown party {id}")))?;
            slots.push(pos);
        }
        let widths = self.embedding_widths();
        let offsets: Vec<usize> = widths.iter().scan(0, |acc, w| {
            let o = *acc;
            *acc += w;
            Some(o)
        }).collect();
        let top = self.active.top();
        let first = &top.layers()[0];
        let out = first.weights.cols();
        let mut w = Vec::with_capacity(first.weights.len());
        for &s in &slots {
            for r in offsets[s]..offsets[s] + widths[s] {
                w.extend_from_slice(first.weights.row(r));
            }
        }
        let mut layers = top.layers().to_vec();
        layers[0] = DenseLayer::new(Tensor::matrix(first.weights.rows(), out, w)?, first.bias.clone(), first.activation)?;
        let passives = slots.iter().map(|&s| self.passives[s].clone()).collect();
        let mut fed = Self::from_parts(passives, Mlp::new(layers)?, order.to_vec(), self.num_classes)?;
        fed.privacy = self.privacy;
        fed.defense_rng = self.defense_rng.clone();
        Ok(fed)
    }
}
