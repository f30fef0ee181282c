use std::sync::Arc;

use rand::Rng;

use crate::error::ensure;
use crate::numcore::{softmax_cross_entropy, ForwardCache, Mlp, Sgd, SgdConfig, Tensor};
use crate::privacy::PrivacyConfig;
use crate::unlearn::MixPlan;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageKind {
    ForwardEmbedding,
    BackwardGradient,
}

/// One message exchanged between a passive party and the active party.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMessage {
    pub kind: MessageKind,
    pub party_id: usize,
    pub round: u64,
    pub payload: Tensor,
}

#[derive(Debug)]
struct PendingRound {
    round: u64,
    cache: ForwardCache,
    mix: Option<(MixPlan, usize)>,
}

/// Passive party `k`: owns a feature shard and the bottom model `G_θk`.
/// Holds no labels.
#[derive(Debug)]
pub struct PassiveParty {
    id: usize,
    bottom: Mlp,
    shard: Option<Arc<Tensor>>,
    optimizer: Sgd,
    pending: Option<PendingRound>,
    next_round: u64,
}

impl Clone for PassiveParty {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            bottom: self.bottom.clone(),
            shard: self.shard.clone(),
            optimizer: self.optimizer.clone(),
            pending: None,
            next_round: self.next_round,
        }
    }
}

impl PassiveParty {
    pub fn new(id: usize, bottom: Mlp) -> Self {
        Self {
            id,
            bottom,
            shard: None,
            optimizer: Sgd::new(),
            pending: None,
            next_round: 0,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn bottom(&self) -> &Mlp {
        &self.bottom
    }

    pub fn bottom_mut(&mut self) -> &mut Mlp {
        self.pending = None;
        &mut self.bottom
    }

    pub fn embedding_dim(&self) -> usize {
        self.bottom.out_dim()
    }

    pub fn shard(&self) -> Option<&Arc<Tensor>> {
        self.shard.as_ref()
    }

    pub fn attach(&mut self, shard: Arc<Tensor>) -> Result<()> {
        ensure!(
            shard.cols() == self.bottom.in_dim(),
            Shape,
            "party {} shard has {} features, bottom model expects {}",
            self.id,
            shard.cols(),
            self.bottom.in_dim()
        );
        self.shard = Some(shard);
        self.pending = None;
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.optimizer.reset();
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// Drops an unanswered forward round.
    pub fn abort_round(&mut self) {
        self.pending = None;
    }

    fn rows(&self, indices: &[usize]) -> Result<Tensor> {
        let shard = self
            .shard
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("party {} has no feature shard attached", self.id)))?;
        ensure!(!indices.is_empty(), Shape, "empty batch");
        shard.select_rows(indices)
    }

    fn begin_round(&mut self, cache: ForwardCache, mix: Option<(MixPlan, usize)>, payload: Tensor) -> Result<RoundMessage> {
        if self.pending.is_some() {
            return Err(Error::ProtocolOrder(format!(
                "party {} started a forward round before the previous backward arrived",
                self.id
            )));
        }
        let round = self.next_round;
        self.next_round += 1;
        self.pending = Some(PendingRound { round, cache, mix });
        Ok(RoundMessage {
            kind: MessageKind::ForwardEmbedding,
            party_id: self.id,
            round,
            payload,
        })
    }

    /// `H_k = G_θk(x_k[indices])`; keeps the cache for the matching backward.
    pub fn forward(&mut self, indices: &[usize]) -> Result<RoundMessage> {
        let x = self.rows(indices)?;
        let (h, cache) = self.bottom.forward(&x)?;
        self.begin_round(cache, None, h)
    }

    /// Embeds the given rows and sends their mixup `H'_k` under `plan`.
    /// The backward for this round routes each mixed-row gradient back to
    /// its two source rows with weights `λ` and `1 − λ`.
    pub fn forward_mixed(&mut self, indices: &[usize], plan: &MixPlan) -> Result<RoundMessage> {
        self.forward_mixed_local(indices, plan).map(|(msg, _)| msg)
    }

    /// [`Self::forward_mixed`], also returning the unmixed embeddings,
    /// which stay with the simulator and are never sent.
    pub(crate) fn forward_mixed_local(&mut self, indices: &[usize], plan: &MixPlan) -> Result<(RoundMessage, Tensor)> {
        let x = self.rows(indices)?;
        plan.validate(indices.len())?;
        let (h, cache) = self.bottom.forward(&x)?;
        let mixed = plan.apply(&h)?;
        let msg = self.begin_round(cache, Some((plan.clone(), indices.len())), mixed)?;
        Ok((msg, h))
    }

    /// Applies the received `∂ℓ/∂H_k` to `θ_k` in `cfg.direction`.
    pub fn backward(&mut self, msg: &RoundMessage, cfg: &SgdConfig) -> Result<()> {
        ensure!(
            msg.kind == MessageKind::BackwardGradient && msg.party_id == self.id,
            Contract,
            "party {} got a {:?} message for party {}",
            self.id,
            msg.kind,
            msg.party_id
        );
        let pending = self.pending.take().ok_or_else(|| {
            Error::ProtocolOrder(format!("party {} received a backward gradient without a forward round", self.id))
        })?;
        if msg.round != pending.round {
            let expected = pending.round;
            self.pending = Some(pending);
            return Err(Error::ProtocolOrder(format!(
                "party {} expected gradient for round {}, got round {}",
                self.id, expected, msg.round
            )));
        }
        let grad_h = match &pending.mix {
            Some((plan, rows)) => plan.route_back(&msg.payload, *rows)?,
            None => msg.payload.clone(),
        };
        let grads = self.bottom.backward_params(&pending.cache, &grad_h)?;
        self.optimizer.step(&mut self.bottom, &grads, cfg)
    }

    /// Inference-only embedding of raw feature rows.
    pub fn embed(&self, features: &Tensor) -> Result<Tensor> {
        self.bottom.infer(features)
    }

    /// Inference-only embedding of attached shard rows.
    pub fn embed_rows(&self, indices: &[usize]) -> Result<Tensor> {
        self.bottom.infer(&self.rows(indices)?)
    }
}

/// The active party: owns the labels and the top model `F_ω`. Never sees
/// raw passive features, only embeddings.
#[derive(Clone, Debug)]
pub struct ActiveParty {
    top: Mlp,
    labels: Option<Arc<Vec<usize>>>,
    num_classes: usize,
    optimizer: Sgd,
    last_rounds: Vec<Option<u64>>,
}

impl ActiveParty {
    pub fn new(top: Mlp, num_classes: usize, parties: usize) -> Result<Self> {
        ensure!(
            top.out_dim() == num_classes,
            Shape,
            "top model outputs {} logits for {} classes",
            top.out_dim(),
            num_classes
        );
        Ok(Self {
            top,
            labels: None,
            num_classes,
            optimizer: Sgd::new(),
            last_rounds: vec![None; parties],
        })
    }

    pub fn top(&self) -> &Mlp {
        &self.top
    }

    pub fn top_mut(&mut self) -> &mut Mlp {
        &mut self.top
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn attach_labels(&mut self, labels: Arc<Vec<usize>>) -> Result<()> {
        ensure!(
            labels.iter().all(|&y| y < self.num_classes),
            Contract,
            "labels must lie in [0, {})",
            self.num_classes
        );
        self.labels = Some(labels);
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.optimizer.reset();
    }

    /// One-hot targets for the attached labels at `rows`.
    pub fn one_hot(&self, rows: &[usize]) -> Result<Tensor> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Contract("active party has no labels attached".into()))?;
        let c = self.num_classes;
        let mut t = vec![0.0; rows.len() * c];
        for (i, &r) in rows.iter().enumerate() {
            let y = *labels.get(r).ok_or(Error::Bounds { index: r, len: labels.len() })?;
            t[i * c + y] = 1.0;
        }
        Tensor::matrix(rows.len(), c, t)
    }

    /// Loss on `F_ω([H_1, …, H_K])`, update of `ω` in `cfg.direction`, and
    /// per-party gradient messages `∂ℓ/∂H_k` (after `defense`).
    pub(crate) fn step<R: Rng + ?Sized>(
        &mut self,
        msgs: &[RoundMessage],
        concat_order: &[usize],
        targets: &Tensor,
        cfg: &SgdConfig,
        defense: &PrivacyConfig,
        rng: &mut R,
    ) -> Result<(f64, Tensor, Vec<RoundMessage>)> {
        ensure!(
            msgs.len() == concat_order.len(),
            Contract,
            "{} embeddings for {} parties",
            msgs.len(),
            concat_order.len()
        );
        for (slot, (msg, &pid)) in msgs.iter().zip(concat_order).enumerate() {
            ensure!(
                msg.kind == MessageKind::ForwardEmbedding && msg.party_id == pid,
                Contract,
                "slot {} expects a forward embedding from party {}, got {:?} from party {}",
                slot,
                pid,
                msg.kind,
                msg.party_id
            );
            if let Some(last) = self.last_rounds[slot] {
                if msg.round <= last {
                    return Err(Error::ProtocolOrder(format!(
                        "party {} round {} does not advance past {}",
                        pid, msg.round, last
                    )));
                }
            }
        }
        let parts: Vec<&Tensor> = msgs.iter().map(|m| &m.payload).collect();
        let joined = Tensor::hcat(&parts)?;
        let (logits, cache) = self.top.forward(&joined)?;
        let (loss, grad_logits) = softmax_cross_entropy(&logits, targets)?;
        let (grad_joined, grads) = self.top.backward(&cache, &grad_logits)?;
        self.optimizer.step(&mut self.top, &grads, cfg)?;
        for (slot, msg) in msgs.iter().enumerate() {
            self.last_rounds[slot] = Some(msg.round);
        }
        let widths: Vec<usize> = msgs.iter().map(|m| m.payload.cols()).collect();
        let replies = grad_joined
            .split_cols(&widths)?
            .into_iter()
            .zip(msgs)
            .map(|(g, m)| {
                Ok(RoundMessage {
                    kind: MessageKind::BackwardGradient,
                    party_id: m.party_id,
                    round: m.round,
                    payload: defense.apply(&g, rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((loss, grad_joined, replies))
    }

    pub fn logits(&self, embeddings: &[Tensor]) -> Result<Tensor> {
        let parts: Vec<&Tensor> = embeddings.iter().collect();
        self.top.infer(&Tensor::hcat(&parts)?)
    }
}
