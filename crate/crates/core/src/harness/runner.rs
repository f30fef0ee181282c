use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{DatasetKind, ExperimentConfig, Method};
use crate::attacks::{
    cluster_label_inference, collect_unlearn_gradients, confidence_scores, mia_asr, mia_fit, model_completion_attack,
    GradientHook, GradientTrace,
};
use crate::data::{load_mnist, save_checkpoint, synth_blobs, write_trace, Dataset, Split, VerticalDataset};
use crate::error::ensure;
use crate::parallel;
use crate::protocol::{train, FederationSpec, SplitFederation};
use crate::unlearn::{amnesiac, finetune, gradient_ascent, retrain, unlearn, Evaluation, ProbeSet, UnlearnReport};
use crate::{Error, Result};

/// Seed offset of the gradient-defense noise stream.
const DEFENSE_STREAM: u64 = 0x5eed_0001;
/// Seed offset of the attack sampling stream.
const ATTACK_STREAM: u64 = 0x5eed_0002;

/// Fixed column order of `metrics.csv`.
pub const CSV_COLUMNS: [&str; 14] = [
    "trial",
    "seed",
    "phase",
    "method",
    "dr_accuracy",
    "du_accuracy",
    "asr",
    "mia_fpr",
    "leakage_accuracy",
    "pmc_retained",
    "pmc_forgotten",
    "epochs_run",
    "config_hash",
    "error",
];

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Train and test splits, partitioned across the passive parties.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: VerticalDataset,
    pub test: VerticalDataset,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let k = cfg.model.parties;
    let (train, test) = match cfg.dataset {
        DatasetKind::Mnist => {
            let (mut tr, mut te) = load_mnist(&cfg.data.path)?;
            if let Some(n) = cfg.data.train_limit {
                tr = tr.head(n)?;
            }
            if let Some(n) = cfg.data.test_limit {
                te = te.head(n)?;
            }
            (tr, te)
        }
        DatasetKind::Blobs => {
            let d = &cfg.data;
            let c = d.blob_classes;
            let all = synth_blobs(c, d.blob_train_per_class + d.blob_test_per_class, d.blob_dim, d.blob_separation, cfg.seed)?;
            let cut = c * d.blob_train_per_class;
            let rows = |r: std::ops::Range<usize>| -> Result<Dataset> {
                let idx: Vec<usize> = r.collect();
                Dataset::new(
                    idx.iter().map(|&i| all.ids[i]).collect(),
                    all.features.select_rows(&idx)?,
                    idx.iter().map(|&i| all.labels[i]).collect(),
                    c,
                )
            };
            (rows(0..cut)?, rows(cut..all.len())?)
        }
    };
    Ok(ExperimentData {
        train: VerticalDataset::from_dataset(&train, k, Split::Train)?,
        test: VerticalDataset::from_dataset(&test, k, Split::Test)?,
    })
}

pub fn federation_spec(cfg: &ExperimentConfig, data: &ExperimentData) -> FederationSpec {
    FederationSpec {
        input_widths: data.train.widths(),
        bottom_hidden: cfg.model.bottom_hidden.clone(),
        embedding_dim: cfg.model.embedding_dim,
        top_hidden: cfg.model.top_hidden.clone(),
        num_classes: cfg.num_classes(),
    }
}

/// Fresh federation with the configured defense, trained on all of `D`.
pub fn train_original(cfg: &ExperimentConfig, data: &ExperimentData, rng: &mut ChaCha8Rng, seed: u64) -> Result<SplitFederation> {
    let mut fed = SplitFederation::new(&federation_spec(cfg, data), rng)?.with_privacy(cfg.privacy, seed ^ DEFENSE_STREAM)?;
    train(&mut fed, &data.train, None, &cfg.train, rng)?;
    Ok(fed)
}

/// Result of applying the configured method to a trained federation.
#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub model: SplitFederation,
    pub report: Option<UnlearnReport>,
    /// Wall-clock time of the method alone.
    pub seconds: f64,
}

pub fn apply_method(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    original: &SplitFederation,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<MethodOutcome> {
    let classes = &cfg.unlearn_classes;
    let eval = Evaluation::new(&data.test, classes)?;
    let ucfg = cfg.unlearn_config();
    let mut model = original.clone();
    let start = Instant::now();
    let report = match cfg.method {
        Method::Ours => {
            let probe = ProbeSet::draw(&data.train, classes, ucfg.probe_size, ucfg.probe_cap, rng)?;
            Some(unlearn(&mut model, &probe, &ucfg, &eval, rng)?)
        }
        Method::Ga => {
            let pool = data.train.rows_in(classes, true).len();
            let n = cfg.unlearn.ga_samples.unwrap_or(pool);
            let samples = ProbeSet::draw(&data.train, classes, n, usize::MAX, rng)?;
            Some(gradient_ascent(&mut model, &samples, &ucfg, &eval, rng)?)
        }
        Method::Retrain => {
            model = retrain(&data.train, classes, &federation_spec(cfg, data), &cfg.train, rng)?
                .with_privacy(cfg.privacy, seed ^ DEFENSE_STREAM)?;
            None
        }
        Method::Finetune => {
            finetune(&mut model, &data.train, classes, &cfg.repair, &cfg.train, rng)?;
            None
        }
        Method::Amnesiac => {
            amnesiac(&mut model, &data.train, classes, &cfg.repair, &cfg.train, rng)?;
            None
        }
    };
    let seconds = report.as_ref().map_or_else(|| start.elapsed().as_secs_f64(), |r| r.seconds);
    Ok(MethodOutcome { model, report, seconds })
}

/// One phase of one trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub trial: usize,
    pub seed: u64,
    pub phase: String,
    pub method: String,
    pub dr_accuracy: Option<f64>,
    pub du_accuracy: Option<f64>,
    pub asr: Option<f64>,
    pub mia_fpr: Option<f64>,
    pub leakage_accuracy: Option<f64>,
    pub pmc_retained: Option<f64>,
    pub pmc_forgotten: Option<f64>,
    pub epochs_run: Option<usize>,
    /// Wall-clock seconds; kept out of `metrics.csv`.
    pub seconds: f64,
    pub config_hash: String,
    pub error: Option<String>,
}

impl MetricsRow {
    fn blank(trial: usize, seed: u64, phase: &str, method: &str, hash: &str) -> Self {
        Self {
            trial,
            seed,
            phase: phase.into(),
            method: method.into(),
            dr_accuracy: None,
            du_accuracy: None,
            asr: None,
            mia_fpr: None,
            leakage_accuracy: None,
            pmc_retained: None,
            pmc_forgotten: None,
            epochs_run: None,
            seconds: 0.0,
            config_hash: hash.into(),
            error: None,
        }
    }

    /// Named numeric metrics, in CSV order.
    pub fn metrics(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("dr_accuracy", self.dr_accuracy),
            ("du_accuracy", self.du_accuracy),
            ("asr", self.asr),
            ("mia_fpr", self.mia_fpr),
            ("leakage_accuracy", self.leakage_accuracy),
            ("pmc_retained", self.pmc_retained),
            ("pmc_forgotten", self.pmc_forgotten),
        ]
    }
}

/// Per-trial sample choices shared by both phases.
struct AttackPlan {
    shadow_members: Vec<usize>,
    shadow_non_members: Vec<usize>,
    forget_train: Vec<usize>,
    forget_test: Vec<usize>,
    labeled: Vec<usize>,
}

impl AttackPlan {
    fn new(cfg: &ExperimentConfig, data: &ExperimentData, rng: &mut ChaCha8Rng) -> Self {
        let classes = &cfg.unlearn_classes;
        let pick = |rows: Vec<usize>, n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
            let mut v: Vec<usize> = rows.choose_multiple(rng, n.min(rows.len())).copied().collect();
            v.sort_unstable();
            v
        };
        let shadow_members = pick(data.train.rows_in(classes, false), cfg.attacks.shadow_size, rng);
        let shadow_non_members = pick(data.test.rows_in(classes, false), cfg.attacks.shadow_size, rng);
        let labeled = pick((0..data.train.len()).collect(), cfg.attacks.completion_config.n_labeled, rng);
        Self {
            shadow_members,
            shadow_non_members,
            forget_train: data.train.rows_in(classes, true),
            forget_test: data.test.rows_in(classes, true),
            labeled,
        }
    }
}

fn score_phase(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    model: &SplitFederation,
    plan: &AttackPlan,
    row: &mut MetricsRow,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let eval = Evaluation::new(&data.test, &cfg.unlearn_classes)?.measure(model)?;
    row.dr_accuracy = Some(eval.retained);
    row.du_accuracy = Some(eval.forgotten);
    let a = &cfg.attacks;
    if a.mia {
        let f = a.mia_feature;
        let m = confidence_scores(model, &data.train, &plan.shadow_members, f)?;
        let nm = confidence_scores(model, &data.test, &plan.shadow_non_members, f)?;
        let attack = mia_fit(&m, &nm, a.mia_kind, f)?;
        let out = mia_asr(
            &attack,
            &confidence_scores(model, &data.train, &plan.forget_train, f)?,
            &confidence_scores(model, &data.test, &plan.forget_test, f)?,
        )?;
        row.asr = Some(out.asr);
        row.mia_fpr = Some(out.false_positive_rate);
    }
    if a.completion {
        let party = model.passive(a.completion_party)?;
        let shard = a.completion_party - 1;
        let labeled = data.train.shard(shard).select_rows(&plan.labeled)?;
        let labels: Vec<usize> = plan.labeled.iter().map(|&r| data.train.labels()[r]).collect();
        let res = model_completion_attack(
            party,
            &labeled,
            &labels,
            data.test.shard(shard),
            data.test.labels(),
            &cfg.unlearn_classes,
            cfg.num_classes(),
            &a.completion_config,
            rng,
        )?;
        row.pmc_retained = Some(res.retained);
        row.pmc_forgotten = Some(res.forgotten);
    }
    Ok(())
}

/// Gradients the passive party would observe if the method sent per-sample
/// gradients for `D_u`; `None` for mixup, which never does.
pub fn leakage_trace(cfg: &ExperimentConfig, data: &ExperimentData, original: &SplitFederation) -> Result<Option<GradientTrace>> {
    let hook = match cfg.method {
        Method::Ours => GradientHook::Mixup,
        Method::Ga => GradientHook::GradientAscent {
            learning_rate: cfg.unlearn.learning_rate,
        },
        _ => cfg.attacks.leakage_hook,
    };
    let samples = data.train.subset(&data.train.rows_in(&cfg.unlearn_classes, true))?;
    let mut probe = original.clone();
    match collect_unlearn_gradients(&mut probe, &samples, &hook, cfg.attacks.leakage_party, cfg.unlearn.batch_size, &cfg.name) {
        Ok(t) => Ok(Some(t)),
        Err(Error::Contract(_)) if hook == GradientHook::Mixup => Ok(None),
        Err(e) => Err(e),
    }
}

/// A trained original model for one trial, with the trial's generator
/// positioned just after training.
#[derive(Clone, Debug)]
pub struct TrainedTrial {
    pub trial: usize,
    pub seed: u64,
    pub original: SplitFederation,
    pub seconds: f64,
    rng: ChaCha8Rng,
}

/// Training half of a trial; seed is `master + trial`.
pub fn train_trial(cfg: &ExperimentConfig, data: &ExperimentData, trial: usize) -> Result<TrainedTrial> {
    let seed = cfg.seed.wrapping_add(trial as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let original = train_original(cfg, data, &mut rng, seed)?;
    Ok(TrainedTrial {
        trial,
        seed,
        original,
        seconds: start.elapsed().as_secs_f64(),
        rng,
    })
}

/// Method and attacks on a trained trial. Several configs that share the
/// scenario may finish the same [`TrainedTrial`].
pub fn finish_trial(cfg: &ExperimentConfig, data: &ExperimentData, trained: &TrainedTrial) -> Result<Vec<MetricsRow>> {
    ensure!(
        trained.original.num_parties() == cfg.model.parties,
        Contract,
        "trained trial has {} parties, config {} expects {}",
        trained.original.num_parties(),
        cfg.name,
        cfg.model.parties
    );
    let (trial, seed) = (trained.trial, trained.seed);
    let hash = cfg.hash();
    let mut rng = trained.rng.clone();
    let mut attack_rng = ChaCha8Rng::seed_from_u64(seed ^ ATTACK_STREAM);
    let plan = AttackPlan::new(cfg, data, &mut attack_rng);
    let original = &trained.original;

    let mut base = MetricsRow::blank(trial, seed, "original", "none", &hash);
    base.seconds = trained.seconds;
    score_phase(cfg, data, original, &plan, &mut base, &mut attack_rng.clone())?;

    let outcome = apply_method(cfg, data, original, &mut rng, seed)?;
    let mut row = MetricsRow::blank(trial, seed, "unlearned", cfg.method.name(), &hash);
    row.seconds = outcome.seconds;
    row.epochs_run = outcome.report.as_ref().map(|r| r.epochs_run);
    score_phase(cfg, data, &outcome.model, &plan, &mut row, &mut attack_rng)?;
    if cfg.attacks.leakage {
        if let Some(trace) = leakage_trace(cfg, data, original)? {
            let m_u = cfg.unlearn_classes.len();
            row.leakage_accuracy = Some(cluster_label_inference(&trace, m_u, cfg.attacks.leakage_restarts, seed)?.accuracy);
            if cfg.output.traces {
                fs::create_dir_all(&cfg.output.dir).map_err(|e| Error::io(&cfg.output.dir, e))?;
                write_trace(&cfg.output.dir.join(format!("trace_trial{trial}.bin")), &trace)?;
            }
        }
    }
    if cfg.output.checkpoints {
        fs::create_dir_all(&cfg.output.dir).map_err(|e| Error::io(&cfg.output.dir, e))?;
        save_checkpoint(original, seed, &cfg.output.dir.join(format!("original_trial{trial}.ckpt")))?;
        save_checkpoint(&outcome.model, seed, &cfg.output.dir.join(format!("unlearned_trial{trial}.ckpt")))?;
    }
    Ok(vec![base, row])
}

/// Train → method → attacks for trial `trial`.
pub fn run_trial(cfg: &ExperimentConfig, data: &ExperimentData, trial: usize) -> Result<Vec<MetricsRow>> {
    finish_trial(cfg, data, &train_trial(cfg, data, trial)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation over trials (0 for a single trial).
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

/// All rows of an experiment plus per-phase mean ± std.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub name: String,
    pub config_hash: String,
    pub trials: usize,
    pub failed_trials: usize,
    #[serde(skip)]
    pub rows: Vec<MetricsRow>,
    /// phase → metric → statistic.
    pub summary: BTreeMap<String, BTreeMap<String, Stat>>,
    /// phase → wall-clock seconds.
    pub seconds: BTreeMap<String, Stat>,
}

impl MetricsReport {
    pub fn from_rows(cfg: &ExperimentConfig, rows: Vec<MetricsRow>) -> Self {
        let mut values: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        let mut secs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.error.is_none()) {
            let phase = values.entry(r.phase.clone()).or_default();
            for (name, v) in r.metrics() {
                if let Some(v) = v {
                    phase.entry(name.to_string()).or_default().push(v);
                }
            }
            secs.entry(r.phase.clone()).or_default().push(r.seconds);
        }
        let summary = values
            .into_iter()
            .map(|(p, m)| (p, m.into_iter().filter_map(|(k, v)| Stat::of(&v).map(|s| (k, s))).collect()))
            .collect();
        Self {
            schema_version: SUMMARY_SCHEMA_VERSION,
            name: cfg.name.clone(),
            config_hash: cfg.hash(),
            trials: cfg.trials,
            failed_trials: rows.iter().filter(|r| r.error.is_some()).count(),
            rows,
            summary,
            seconds: secs.into_iter().filter_map(|(p, v)| Stat::of(&v).map(|s| (p, s))).collect(),
        }
    }

    pub fn stat(&self, phase: &str, metric: &str) -> Option<Stat> {
        self.summary.get(phase).and_then(|m| m.get(metric)).copied()
    }

    /// Deterministic CSV: fixed columns, no timings.
    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        let num = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            let err = r.error.as_deref().unwrap_or("").replace(['"', '\n', ','], " ");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.trial,
                r.seed,
                r.phase,
                r.method,
                num(r.dr_accuracy),
                num(r.du_accuracy),
                num(r.asr),
                num(r.mia_fpr),
                num(r.leakage_accuracy),
                num(r.pmc_retained),
                num(r.pmc_forgotten),
                r.epochs_run.map(|e| e.to_string()).unwrap_or_default(),
                r.config_hash,
                err
            );
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("trial,phase,method,seconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6}", r.trial, r.phase, r.method, r.seconds);
        }
        out
    }

    /// Writes `metrics.csv`, `timings.csv`, `summary.json` and `config.json`.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("metrics.csv", self.to_csv())?;
        put("timings.csv", self.timings_csv())?;
        put(
            "summary.json",
            serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?,
        )?;
        put("config.json", cfg.canonical_json())
    }
}

/// Runs every trial (in parallel), then writes the report files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let report = run_trials(cfg)?;
    report.write(cfg, &cfg.output.dir)?;
    Ok(report)
}

/// [`run_experiment`] without touching the filesystem.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let hash = cfg.hash();
    let rows = parallel::map_range(cfg.trials, |t| run_trial(cfg, &data, t).unwrap_or_else(|e| error_row(cfg, t, &hash, e)));
    Ok(MetricsReport::from_rows(cfg, rows.into_iter().flatten().collect()))
}

/// Finishes already trained trials under `cfg`; failures become error rows.
pub fn finish_trials(cfg: &ExperimentConfig, data: &ExperimentData, trained: &[TrainedTrial]) -> Result<MetricsReport> {
    cfg.validate()?;
    let hash = cfg.hash();
    let rows = parallel::map(trained, |t| finish_trial(cfg, data, t).unwrap_or_else(|e| error_row(cfg, t.trial, &hash, e)));
    Ok(MetricsReport::from_rows(cfg, rows.into_iter().flatten().collect()))
}

fn error_row(cfg: &ExperimentConfig, trial: usize, hash: &str, e: Error) -> Vec<MetricsRow> {
    let mut r = MetricsRow::blank(trial, cfg.seed.wrapping_add(trial as u64), "error", cfg.method.name(), hash);
    r.error = Some(e.to_string());
    vec![r]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuntimeRow {
    pub name: String,
    pub method: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuntimeTable {
    pub rows: Vec<RuntimeRow>,
    /// `min(other) / ours` against retrain and fine-tune, when both present.
    pub speedup_vs_retrain: Option<f64>,
    pub speedup_vs_finetune: Option<f64>,
}

impl RuntimeTable {
    /// Whether ours beats retrain and fine-tune (where present).
    pub fn ours_fastest(&self) -> bool {
        [self.speedup_vs_retrain, self.speedup_vs_finetune]
            .iter()
            .flatten()
            .all(|&s| s > 1.0)
    }
}

/// Times each config's method against one shared trained federation.
pub fn compare_runtimes(cfgs: &[ExperimentConfig]) -> Result<RuntimeTable> {
    ensure!(!cfgs.is_empty(), Contract, "no configs to compare");
    let first = &cfgs[0];
    for c in cfgs {
        c.validate()?;
        ensure!(
            c.dataset == first.dataset
                && c.data == first.data
                && c.model == first.model
                && c.train == first.train
                && c.unlearn_classes == first.unlearn_classes
                && c.seed == first.seed,
            Contract,
            "config {} does not share the scenario of {}",
            c.name,
            first.name
        );
    }
    let data = load_data(first)?;
    let mut rng = ChaCha8Rng::seed_from_u64(first.seed);
    let original = train_original(first, &data, &mut rng, first.seed)?;
    let mut rows = Vec::with_capacity(cfgs.len());
    for c in cfgs {
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed.wrapping_add(1));
        let out = apply_method(c, &data, &original, &mut rng, c.seed)?;
        rows.push(RuntimeRow {
            name: c.name.clone(),
            method: c.method.name().into(),
            seconds: out.seconds,
        });
    }
    let best = |m: &str| {
        rows.iter()
            .filter(|r| r.method == m)
            .map(|r| r.seconds)
            .fold(None, |a: Option<f64>, s| Some(a.map_or(s, |a| a.min(s))))
    };
    let ours = best("ours");
    let speed = |m: &str| ours.zip(best(m)).map(|(o, t)| t / o.max(1e-12));
    Ok(RuntimeTable {
        speedup_vs_retrain: speed("retrain"),
        speedup_vs_finetune: speed("finetune"),
        rows,
    })
}

/// Unlearn classes as a sorted list, for display.
pub fn class_list(classes: &BTreeSet<usize>) -> String {
    classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}
