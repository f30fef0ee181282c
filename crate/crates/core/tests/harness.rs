//! Config parsing, the experiment pipeline, reports and the CLI.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use vfu::harness::{
    compare_runtimes, finish_trial, load_data, run_experiment, run_trials, train_trial, DatasetKind, ExperimentConfig, Method,
    MetricsReport, Scenario, CSV_COLUMNS,
};
use vfu::privacy::PrivacyConfig;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bundled() -> Vec<(PathBuf, ExperimentConfig)> {
    let mut out: Vec<_> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| {
            let cfg = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (p, cfg)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn blobs(name: &str, method: Method, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: name.into(),
        dataset: DatasetKind::Blobs,
        method,
        seed: 11,
        trials: 2,
        ..ExperimentConfig::default()
    };
    cfg.model.embedding_dim = 4;
    cfg.model.top_hidden = vec![8];
    cfg.train.epochs = 3;
    cfg.unlearn.learning_rate = 1e-3;
    cfg.unlearn.max_learning_rate = 1e-3;
    cfg.attacks.shadow_size = 100;
    cfg.attacks.leakage_restarts = 5;
    cfg.output.dir = out.to_path_buf();
    cfg
}

fn mnist_present() -> bool {
    configs_dir().join("../data/mnist/train-images-idx3-ubyte").exists()
}

#[test]
fn bundled_configs_parse_and_cover_the_scenarios() {
    let all = bundled();
    assert!(all.len() >= 10);
    let scenarios: BTreeSet<_> = all.iter().map(|(_, c)| format!("{:?}", c.scenario)).collect();
    for s in [Scenario::SingleClass, Scenario::TwoClass, Scenario::MultiClass] {
        assert!(scenarios.contains(&format!("{s:?}")), "{s:?}");
    }
    let parties: BTreeSet<_> = all.iter().map(|(_, c)| c.model.parties).collect();
    assert!([1, 2, 4].iter().all(|k| parties.contains(k)), "{parties:?}");
    let probes: BTreeSet<_> = all.iter().filter(|(_, c)| c.method == Method::Ours).map(|(_, c)| c.unlearn.probe_size).collect();
    assert!(probes.len() >= 3, "{probes:?}");
    assert!(all.iter().any(|(_, c)| matches!(c.privacy, PrivacyConfig::GaussianNoise { .. })));
    assert!(all.iter().any(|(_, c)| matches!(c.privacy, PrivacyConfig::TopKCompression { .. })));
    let methods: BTreeSet<_> = all.iter().map(|(_, c)| c.method).collect();
    for m in [Method::Ours, Method::Retrain, Method::Finetune, Method::Amnesiac, Method::Ga] {
        assert!(methods.contains(&m), "{m:?}");
    }
    // relative paths resolve against the config file
    for (p, c) in &all {
        if c.dataset == DatasetKind::Mnist {
            assert!(c.data.path.starts_with(p.parent().unwrap()), "{}", c.data.path.display());
        }
    }
}

#[test]
fn parse_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[model]\nparties = 2\nwidth = 3\n").unwrap();
    let err = ExperimentConfig::load(&p).unwrap_err().to_string();
    assert!(err.contains("model.width"), "{err}");
    std::fs::write(&p, "scenario = \"two_class\"\nunlearn_classes = [1]\n").unwrap();
    assert!(ExperimentConfig::load(&p).unwrap_err().to_string().contains("unlearn_classes"));
    std::fs::write(&p, "[privacy]\nmechanism = \"blur\"\n").unwrap();
    assert!(ExperimentConfig::load(&p).unwrap_err().to_string().contains("privacy"));
}

#[test]
fn same_seed_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs("det", Method::Ours, dir.path());
    let a = run_trials(&cfg).unwrap();
    let b = run_trials(&cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.summary, b.summary);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(run_trials(&other).unwrap().to_csv(), a.to_csv());
}

#[test]
fn report_files_carry_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs("files", Method::Ga, dir.path());
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.failed_trials, 0);

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    let stored: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    let hash_col = CSV_COLUMNS.iter().position(|&c| c == "config_hash").unwrap();
    for line in lines {
        assert_eq!(line.split(',').nth(hash_col).unwrap(), stored.hash());
    }

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    let du = &summary["summary"]["unlearned"]["du_accuracy"];
    assert!(du["mean"].is_number() && du["std"].is_number(), "{du}");
    assert_eq!(du["n"], 2);
    assert!(summary["summary"]["unlearned"]["leakage_accuracy"]["mean"].is_number());
    let timings = std::fs::read_to_string(dir.path().join("timings.csv")).unwrap();
    assert_eq!(timings.lines().count(), 5);
}

#[test]
fn failed_trials_become_error_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = blobs("broken", Method::Ga, dir.path());
    cfg.unlearn.ga_samples = Some(1_000_000);
    let report: MetricsReport = run_trials(&cfg).unwrap();
    assert_eq!(report.failed_trials, 2);
    assert!(report.rows.iter().all(|r| r.error.is_some()));
    assert!(report.to_csv().lines().skip(1).all(|l| !l.ends_with(',')));
}

#[test]
fn runtime_table_checks_its_inputs() {
    assert!(compare_runtimes(&[]).is_err());
    let dir = tempfile::tempdir().unwrap();
    let ours = blobs("ours", Method::Ours, dir.path());
    let mut other = blobs("retrain", Method::Retrain, dir.path());
    other.seed += 1;
    assert!(compare_runtimes(&[ours.clone(), other.clone()]).is_err());
    other.seed = ours.seed;
    let table = compare_runtimes(&[ours.clone(), other, blobs("ft", Method::Finetune, dir.path())]).unwrap();
    assert_eq!(table.rows.len(), 3);
    assert!(table.speedup_vs_retrain.is_some() && table.speedup_vs_finetune.is_some());
    let twice = compare_runtimes(&[ours.clone(), ours]).unwrap();
    assert_eq!(twice.rows.len(), 2);
}

#[test]
fn cli_subcommands_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_vfu");
    let out = dir.path().join("out");
    let mut cfg = blobs("cli", Method::Ours, &out);
    cfg.trials = 1;
    let toml_path = dir.path().join("cli.toml");
    std::fs::write(&toml_path, toml::to_string(&cfg).unwrap()).unwrap();
    let mut retrain = cfg.clone();
    retrain.name = "cli-retrain".into();
    retrain.method = Method::Retrain;
    let retrain_path = dir.path().join("retrain.toml");
    std::fs::write(&retrain_path, toml::to_string(&retrain).unwrap()).unwrap();

    let run = |args: &[&str]| {
        let o = Command::new(bin).args(args).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    let c = toml_path.to_str().unwrap();
    run(&["train", "--config", c, "--seed", "3"]);
    let ckpt = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .expect("train writes a checkpoint");
    let k = ckpt.to_str().unwrap();
    run(&["unlearn", "--config", c, "--seed", "3", "--checkpoint", k]);
    run(&["attack", "--config", c, "--seed", "3", "--checkpoint", k]);
    run(&["experiment", "--config", c, "--seed", "3"]);
    assert!(out.join("metrics.csv").exists());
    let table = run(&["compare", "--config", c, retrain_path.to_str().unwrap(), "--seed", "3"]);
    assert!(table.contains("retrain"), "{table}");

    let bad = Command::new(bin).args(["experiment", "--config", "/nonexistent.toml"]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn desk_baselines_on_mnist() {
    if !mnist_present() {
        eprintln!("MNIST files not found; skipping");
        return;
    }
    let base = ExperimentConfig::load(&configs_dir().join("compare_retrain.toml")).unwrap();
    let mut cfg = ExperimentConfig { trials: 1, ..base };
    cfg.attacks.leakage = false;
    let data = load_data(&cfg).unwrap();
    let trained = train_trial(&cfg, &data, 0).unwrap();
    let run = |method: Method| {
        let c = ExperimentConfig { method, ..cfg.clone() };
        let rows = finish_trial(&c, &data, &trained).unwrap();
        (rows[0].clone(), rows[1].clone())
    };
    let (orig, retrained) = run(Method::Retrain);
    let (_, tuned) = run(Method::Finetune);
    let (_, amnesiac) = run(Method::Amnesiac);
    let v = |r: &vfu::harness::MetricsRow| (r.dr_accuracy.unwrap(), r.du_accuracy.unwrap(), r.asr.unwrap(), r.mia_fpr.unwrap());
    let (o, r, f, a) = (v(&orig), v(&retrained), v(&tuned), v(&amnesiac));
    eprintln!("original {o:?}\nretrain {r:?}\nfinetune {f:?}\namnesiac {a:?}");
    assert!(r.1 <= 1.0 && (r.0 - o.0).abs() <= 1.0);
    assert!((r.2 - r.3).abs() <= 10.0, "retrained ASR should sit at the false-positive rate");
    assert!(o.2 > r.2, "the original model remembers D_u");
    assert!(f.0 >= o.0 - 2.0 && f.1 < o.1);
    assert!(a.1 <= 5.0);
}
