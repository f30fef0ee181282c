use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::VerticalDataset;
use crate::error::ensure;
use crate::numcore::softmax;
use crate::protocol::SplitFederation;
use crate::Result;

const LOGISTIC_STEPS: usize = 2000;
const LOGISTIC_RATE: f64 = 0.5;

/// Per-sample score the attack looks at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiaFeature {
    /// Largest softmax probability.
    #[default]
    MaxSoftmax,
    /// Softmax probability of the true label.
    TrueLabel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiaKind {
    /// `member ⇔ score ≥ threshold`.
    #[default]
    Threshold,
    /// Logistic head on the log-odds of the score.
    Logistic,
}

/// Scores of identified samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
}

impl ScoredSet {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Confidence scores of `rows` under `fed`.
pub fn confidence_scores(fed: &SplitFederation, ds: &VerticalDataset, rows: &[usize], feature: MiaFeature) -> Result<ScoredSet> {
    let probs = softmax(&fed.dataset_logits(ds, rows)?);
    let scores = probs
        .iter_rows()
        .zip(rows)
        .map(|(p, &r)| match feature {
            MiaFeature::MaxSoftmax => p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            MiaFeature::TrueLabel => p[ds.labels()[r]],
        })
        .collect();
    Ok(ScoredSet {
        ids: rows.iter().map(|&r| ds.ids()[r]).collect(),
        scores,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiaModel {
    pub kind: MiaKind,
    pub feature: MiaFeature,
    pub threshold: f64,
    /// Logistic weight and bias on `ln(s / (1 − s))`.
    pub logistic: Option<(f64, f64)>,
    /// Balanced accuracy (%) on the shadow data.
    pub shadow_accuracy: f64,
    fit_ids: BTreeSet<u64>,
}

fn log_odds(s: f64) -> f64 {
    let s = s.clamp(1e-12, 1.0 - 1e-12);
    (s / (1.0 - s)).ln()
}

fn balanced(members: &[f64], non_members: &[f64], is_member: impl Fn(f64) -> bool) -> f64 {
    let tpr = members.iter().filter(|&&s| is_member(s)).count() as f64 / members.len() as f64;
    let tnr = non_members.iter().filter(|&&s| !is_member(s)).count() as f64 / non_members.len() as f64;
    50.0 * (tpr + tnr)
}

impl MiaModel {
    pub fn is_member(&self, score: f64) -> bool {
        match (self.kind, self.logistic) {
            (MiaKind::Logistic, Some((w, b))) => w * log_odds(score) + b >= 0.0,
            _ => score >= self.threshold,
        }
    }

    pub fn fit_ids(&self) -> &BTreeSet<u64> {
        &self.fit_ids
    }
}

/// Fits the attack on shadow members and non-members.
pub fn mia_fit(members: &ScoredSet, non_members: &ScoredSet, kind: MiaKind, feature: MiaFeature) -> Result<MiaModel> {
    ensure!(
        !members.is_empty() && !non_members.is_empty(),
        Contract,
        "shadow data needs both members and non-members"
    );
    let (m, nm) = (&members.scores, &non_members.scores);
    let mut candidates: Vec<f64> = m.iter().chain(nm).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut cuts = vec![f64::NEG_INFINITY];
    cuts.extend(candidates.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    cuts.push(f64::INFINITY);
    let mut threshold = cuts[0];
    let mut best = f64::NEG_INFINITY;
    for &t in &cuts {
        let acc = balanced(m, nm, |s| s >= t);
        if acc > best {
            best = acc;
            threshold = t;
        }
    }
    let logistic = (kind == MiaKind::Logistic).then(|| fit_logistic(m, nm));
    if let Some((w, b)) = logistic {
        best = balanced(m, nm, |s| w * log_odds(s) + b >= 0.0);
    }
    Ok(MiaModel {
        kind,
        feature,
        threshold,
        logistic,
        shadow_accuracy: best,
        fit_ids: members.ids.iter().chain(&non_members.ids).copied().collect(),
    })
}

/// Class-balanced logistic regression on standardized log-odds.
fn fit_logistic(m: &[f64], nm: &[f64]) -> (f64, f64) {
    let xs: Vec<(f64, f64, f64)> = m
        .iter()
        .map(|&s| (log_odds(s), 1.0, 0.5 / m.len() as f64))
        .chain(nm.iter().map(|&s| (log_odds(s), 0.0, 0.5 / nm.len() as f64)))
        .collect();
    let mean = xs.iter().map(|x| x.0 * x.2).sum::<f64>();
    let sd = xs.iter().map(|x| (x.0 - mean).powi(2) * x.2).sum::<f64>().sqrt().max(1e-12);
    let (mut w, mut b) = (0.0, 0.0);
    for _ in 0..LOGISTIC_STEPS {
        let (mut gw, mut gb) = (0.0, 0.0);
        for &(x, y, wt) in &xs {
            let z = (x - mean) / sd;
            let p = 1.0 / (1.0 + (-(w * z + b)).exp());
            gw += wt * (p - y) * z;
            gb += wt * (p - y);
        }
        w -= LOGISTIC_RATE * gw;
        b -= LOGISTIC_RATE * gb;
    }
    (w / sd, b - w * mean / sd)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaOutcome {
    /// % of `D_u` judged member.
    pub asr: f64,
    /// % of the non-member control judged member.
    pub false_positive_rate: f64,
}

/// Attack success rate on `forget` plus the false-positive rate on a
/// non-member control. Both sets must be disjoint from the shadow data.
pub fn mia_asr(model: &MiaModel, forget: &ScoredSet, non_members: &ScoredSet) -> Result<MiaOutcome> {
    ensure!(!forget.is_empty() && !non_members.is_empty(), Contract, "empty evaluation set");
    for id in forget.ids.iter().chain(&non_members.ids) {
        ensure!(
            !model.fit_ids.contains(id),
            Contract,
            "sample {} was used to fit the attack",
            id
        );
    }
    let rate = |s: &ScoredSet| 100.0 * s.scores.iter().filter(|&&x| model.is_member(x)).count() as f64 / s.len() as f64;
    Ok(MiaOutcome {
        asr: rate(forget),
        false_positive_rate: rate(non_members),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(first_id: u64, scores: Vec<f64>) -> ScoredSet {
        ScoredSet {
            ids: (first_id..first_id + scores.len() as u64).collect(),
            scores,
        }
    }

    #[test]
    fn separable_threshold() {
        let m = mia_fit(&set(0, vec![1.0; 20]), &set(100, vec![0.5; 20]), MiaKind::Threshold, MiaFeature::MaxSoftmax).unwrap();
        assert!(m.threshold > 0.5 && m.threshold < 1.0);
        assert_eq!(m.shadow_accuracy, 100.0);
    }

    #[test]
    fn identical_distributions_are_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..2000).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.gen()).collect();
        let m = mia_fit(&set(0, a.clone()), &set(5000, b), MiaKind::Threshold, MiaFeature::MaxSoftmax).unwrap();
        assert!((m.shadow_accuracy - 50.0).abs() <= 5.0, "{}", m.shadow_accuracy);
        let fresh: Vec<f64> = (0..2000).map(|_| rng.gen()).collect();
        let fresh2: Vec<f64> = (0..2000).map(|_| rng.gen()).collect();
        let out = mia_asr(&m, &set(10_000, fresh), &set(20_000, fresh2)).unwrap();
        assert!((out.asr - out.false_positive_rate).abs() <= 10.0);
    }

    #[test]
    fn logistic_separates() {
        let m = mia_fit(&set(0, vec![0.99; 10]), &set(50, vec![0.6; 10]), MiaKind::Logistic, MiaFeature::MaxSoftmax).unwrap();
        assert_eq!(m.shadow_accuracy, 100.0);
        assert!(m.is_member(0.99) && !m.is_member(0.6));
    }

    #[test]
    fn degenerate_and_overlapping_sets_rejected() {
        assert!(mia_fit(&set(0, vec![]), &set(0, vec![0.5]), MiaKind::Threshold, MiaFeature::MaxSoftmax).is_err());
        let m = mia_fit(&set(0, vec![1.0]), &set(1, vec![0.5]), MiaKind::Threshold, MiaFeature::MaxSoftmax).unwrap();
        assert!(mia_asr(&m, &set(1, vec![0.9]), &set(7, vec![0.1])).is_err());
    }

    #[test]
    fn constant_non_member_rule_has_zero_asr() {
        let m = mia_fit(&set(0, vec![0.2]), &set(1, vec![0.9]), MiaKind::Threshold, MiaFeature::MaxSoftmax).unwrap();
        let mut never = m.clone();
        never.threshold = f64::INFINITY;
        let out = mia_asr(&never, &set(10, vec![0.3, 1.0]), &set(20, vec![0.5])).unwrap();
        assert_eq!(out.asr, 0.0);
    }
}
