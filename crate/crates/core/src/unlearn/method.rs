use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mixup::{MixConfig, MixPlan};
use crate::data::VerticalDataset;
use crate::error::ensure;
use crate::numcore::{SgdConfig, Tensor};
use crate::parallel;
use crate::protocol::{accuracy, RoundMessage, SplitFederation};
use crate::{Error, Result};

/// Labeled few-shot samples `D_p` of the unlearn classes.
#[derive(Clone, Debug)]
pub struct ProbeSet {
    data: VerticalDataset,
}

impl ProbeSet {
    /// Wraps probe rows; every label must lie in `classes` and there may be
    /// at most `cap` rows.
    pub fn new(data: VerticalDataset, classes: &BTreeSet<usize>, cap: usize) -> Result<Self> {
        ensure!(!data.is_empty(), Contract, "empty probe set");
        ensure!(data.len() <= cap, Contract, "{} probe samples exceed the cap of {}", data.len(), cap);
        ensure!(
            data.labels().iter().all(|y| classes.contains(y)),
            Contract,
            "probe labels must belong to the unlearn classes {:?}",
            classes
        );
        Ok(Self { data })
    }

    /// Draws `n` random rows of `ds` whose labels lie in `classes`.
    pub fn draw(ds: &VerticalDataset, classes: &BTreeSet<usize>, n: usize, cap: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let pool = ds.rows_in(classes, true);
        ensure!(
            n >= 1 && n <= pool.len(),
            Contract,
            "cannot draw {} probe samples from {} unlearn-class rows",
            n,
            pool.len()
        );
        let rows: Vec<usize> = pool.choose_multiple(rng, n).copied().collect();
        Self::new(ds.subset(&rows)?, classes, cap)
    }

    pub fn data(&self) -> &VerticalDataset {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        self.data.labels()
    }
}

/// Mixed embeddings `H'_k` and soft labels `y'` for one set of pairs.
#[derive(Clone, Debug)]
pub struct MixedBatch {
    /// One `[m × d_k]` tensor per party, in concatenation order.
    pub embeddings: Vec<Tensor>,
    pub soft_labels: Tensor,
    pub plan: MixPlan,
    source_labels: Vec<usize>,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.plan.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plan.is_empty()
    }

    /// Splits into consecutive batches of at most `size` mixed rows.
    pub fn chunks(&self, size: usize) -> Result<Vec<MixedBatch>> {
        let size = size.max(1);
        let mut out = Vec::new();
        for (c, plan) in self.plan.chunks(size).into_iter().enumerate() {
            let rows: Vec<usize> = (c * size..c * size + plan.len()).collect();
            out.push(MixedBatch {
                embeddings: self.embeddings.iter().map(|e| e.select_rows(&rows)).collect::<Result<_>>()?,
                soft_labels: self.soft_labels.select_rows(&rows)?,
                plan,
                source_labels: self.source_labels.clone(),
            });
        }
        Ok(out)
    }
}

/// Embeds every probe row at every party and mixes them under one plan
/// drawn from `mix`, so all parties and the labels share pairs and `λ`.
pub fn build_mixed_batch(
    fed: &SplitFederation,
    probe: &ProbeSet,
    mix: &MixConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MixedBatch> {
    ensure!(!probe.is_empty(), Contract, "empty probe set");
    let plan = mix.plan(probe.labels(), rng)?;
    let embeddings = fed
        .passives()
        .iter()
        .map(|p| {
            let h = p.embed(probe.data().shard(p.id() - 1))?;
            plan.apply(&h)
        })
        .collect::<Result<Vec<_>>>()?;
    let soft_labels = plan.soft_labels(probe.labels(), fed.num_classes())?;
    Ok(MixedBatch {
        embeddings,
        soft_labels,
        plan,
        source_labels: probe.labels().to_vec(),
    })
}

/// One ascent round on a mixed batch. The probe set must be attached to
/// `fed`. Each party recomputes its probe embeddings with the current
/// bottom model, mixes them under `batch.plan` and routes the returned
/// gradient back through the mix. Returns the batch loss before the update.
pub fn unlearn_step(fed: &mut SplitFederation, batch: &MixedBatch, cfg: &SgdConfig) -> Result<f64> {
    let loss = mixed_step(fed, batch, cfg, false)?;
    Ok(loss.expect("step without a forgetting check always runs"))
}

/// [`unlearn_step`] that first checks, on the unmixed embeddings of this
/// round, whether any probe sample is still predicted as its own label.
/// When none is, the round is abandoned before the update and `None` is
/// returned.
fn mixed_step(fed: &mut SplitFederation, batch: &MixedBatch, cfg: &SgdConfig, check: bool) -> Result<Option<f64>> {
    let rows: Vec<usize> = (0..batch.source_labels.len()).collect();
    let sent = parallel::map_mut(fed.passives_mut(), |p| p.forward_mixed_local(&rows, &batch.plan))
        .into_iter()
        .collect::<Result<Vec<(RoundMessage, Tensor)>>>();
    let (msgs, plain): (Vec<RoundMessage>, Vec<Tensor>) = match sent {
        Ok(m) => m.into_iter().unzip(),
        Err(e) => {
            fed.abort_round();
            return Err(e);
        }
    };
    if check {
        let forgotten = fed
            .active()
            .logits(&plain)
            .map(|l| l.argmax_rows().iter().zip(&batch.source_labels).all(|(p, y)| p != y));
        match forgotten {
            Ok(false) => {}
            other => {
                fed.abort_round();
                return other.map(|_| None);
            }
        }
    }
    let out = match fed.active_step(&msgs, &batch.soft_labels, cfg) {
        Ok(out) => out,
        Err(e) => {
            fed.abort_round();
            return Err(e);
        }
    };
    fed.passive_backward_all(&out.replies, cfg)?;
    Ok(Some(out.loss))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    /// Unlearning rate `η`.
    pub learning_rate: f64,
    /// Unlearn epochs `N`.
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub unlearn_classes: BTreeSet<usize>,
    /// `n_p`.
    pub probe_size: usize,
    pub probe_cap: usize,
    pub mix: MixConfig,
    /// Sanity cap on `η`.
    pub max_learning_rate: f64,
    /// Stop as soon as no probe sample is predicted as its own label.
    pub stop_when_forgotten: bool,
    /// Clear momentum buffers before the first ascent step.
    pub reset_optimizer: bool,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-7,
            epochs: 10,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 5e-4,
            unlearn_classes: BTreeSet::from([0]),
            probe_size: 40,
            probe_cap: 40,
            mix: MixConfig::default(),
            max_learning_rate: 1e-5,
            stop_when_forgotten: true,
            reset_optimizer: true,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate <= self.max_learning_rate,
            Contract,
            "unlearning rate {} exceeds the cap {}",
            self.learning_rate,
            self.max_learning_rate
        );
        ensure!(self.batch_size >= 1, Contract, "batch_size must be at least 1");
        ensure!(!self.unlearn_classes.is_empty(), Contract, "no unlearn classes");
        ensure!(
            self.probe_size >= 1 && self.probe_size <= self.probe_cap,
            Contract,
            "probe_size {} must lie in [1, {}]",
            self.probe_size,
            self.probe_cap
        );
        self.mix.validate()?;
        self.sgd().validate()
    }

    /// Ascent optimizer settings.
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig::ascent(self.learning_rate)
            .with_momentum(self.momentum)
            .with_weight_decay(self.weight_decay)
    }
}

/// Accuracy (%) on the retained and forgotten parts of an evaluation set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub retained: f64,
    pub forgotten: f64,
}

/// Held-out rows split into `D_r` and `D_u` by label.
#[derive(Clone, Debug)]
pub struct Evaluation<'a> {
    data: &'a VerticalDataset,
    retained: Vec<usize>,
    forgotten: Vec<usize>,
}

impl<'a> Evaluation<'a> {
    pub fn new(data: &'a VerticalDataset, classes: &BTreeSet<usize>) -> Result<Self> {
        let retained = data.rows_in(classes, false);
        let forgotten = data.rows_in(classes, true);
        ensure!(
            !retained.is_empty() && !forgotten.is_empty(),
            Contract,
            "evaluation set needs both retained and forgotten rows"
        );
        Ok(Self {
            data,
            retained,
            forgotten,
        })
    }

    pub fn data(&self) -> &VerticalDataset {
        self.data
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn forgotten(&self) -> &[usize] {
        &self.forgotten
    }

    pub fn measure(&self, fed: &SplitFederation) -> Result<Accuracies> {
        Ok(Accuracies {
            retained: accuracy(fed, self.data, &self.retained)?,
            forgotten: accuracy(fed, self.data, &self.forgotten)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub pre: Accuracies,
    pub post: Accuracies,
    /// Wall-clock time of the ascent loop.
    pub seconds: f64,
    pub epochs_run: usize,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
    pub stopped_early: bool,
}

pub(crate) enum AscentMode<'a> {
    Mixup(&'a MixConfig),
    Plain,
}

/// Few-shot label unlearning: `N` epochs of fresh mixup over the probe
/// embeddings, each followed by ascent on `ω` and every `θ_k` in batches.
/// Leaves the probe set attached.
pub fn unlearn(
    fed: &mut SplitFederation,
    probe: &ProbeSet,
    cfg: &UnlearnConfig,
    eval: &Evaluation,
    rng: &mut ChaCha8Rng,
) -> Result<UnlearnReport> {
    run_ascent(fed, probe, cfg, AscentMode::Mixup(&cfg.mix), eval, rng)
}

pub(crate) fn run_ascent(
    fed: &mut SplitFederation,
    probe: &ProbeSet,
    cfg: &UnlearnConfig,
    mode: AscentMode,
    eval: &Evaluation,
    rng: &mut ChaCha8Rng,
) -> Result<UnlearnReport> {
    cfg.validate()?;
    ensure!(
        probe.labels().iter().all(|y| cfg.unlearn_classes.contains(y)),
        Contract,
        "probe labels must belong to the unlearn classes {:?}",
        cfg.unlearn_classes
    );
    let pre = eval.measure(fed)?;
    if cfg.reset_optimizer {
        fed.reset_optimizers();
    }
    fed.attach(probe.data())?;
    let sgd = cfg.sgd();
    let probe_rows: Vec<usize> = (0..probe.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;
    let mut epochs_run = 0;
    let start = Instant::now();
    let mut stepped = false;
    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let mut total = 0.0;
        let mut steps = 0;
        match mode {
            AscentMode::Mixup(mix) => {
                let batch = build_mixed_batch(fed, probe, mix, rng)?;
                for chunk in batch.chunks(cfg.batch_size)? {
                    // The check on this round's embeddings sees the parameters
                    // left by the previous step.
                    let check = cfg.stop_when_forgotten && stepped;
                    match mixed_step(fed, &chunk, &sgd, check)? {
                        Some(loss) => total += loss,
                        None => {
                            stopped_early = true;
                            break;
                        }
                    }
                    steps += 1;
                    stepped = true;
                    if !fed.is_finite() {
                        return Err(Error::Divergence { epoch });
                    }
                }
            }
            AscentMode::Plain => {
                let mut order = probe_rows.clone();
                order.shuffle(rng);
                for rows in order.chunks(cfg.batch_size) {
                    let targets = fed.active().one_hot(rows)?;
                    total += fed.round(rows, &targets, &sgd)?;
                    steps += 1;
                    if after_step(fed, probe, &probe_rows, cfg, epoch)? {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
        if steps == 0 {
            epochs_run = epoch;
            break;
        }
        loss_trace.push(total / steps as f64);
        if stopped_early {
            break;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let post = eval.measure(fed)?;
    Ok(UnlearnReport {
        pre,
        post,
        seconds,
        epochs_run,
        loss_trace,
        stopped_early,
    })
}

/// Divergence guard, then the early-stop test.
fn after_step(fed: &SplitFederation, probe: &ProbeSet, rows: &[usize], cfg: &UnlearnConfig, epoch: usize) -> Result<bool> {
    if !fed.is_finite() {
        return Err(Error::Divergence { epoch });
    }
    if !cfg.stop_when_forgotten {
        return Ok(false);
    }
    let pred = fed.predict_rows(probe.data(), rows)?;
    Ok(pred.iter().zip(probe.labels()).all(|(p, y)| p != y))
}
