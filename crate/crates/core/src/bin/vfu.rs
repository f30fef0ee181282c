//! `vfu`: train, unlearn, attack and compare split models from TOML configs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vfu::attacks::cluster_label_inference;
use vfu::data::{load_checkpoint, save_checkpoint, write_trace};
use vfu::harness::{
    apply_method, class_list, compare_runtimes, leakage_trace, load_data, run_experiment, train_original,
    ExperimentConfig, ExperimentData,
};
use vfu::protocol::{accuracy, SplitFederation};
use vfu::unlearn::Evaluation;
use vfu::Result;

#[derive(Parser)]
#[command(name = "vfu", version, about = "Vertical federated learning with few-shot label unlearning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the split model and save a checkpoint.
    Train(Common),
    /// Apply the configured unlearning method to a checkpoint (or a freshly
    /// trained model) and save the result.
    Unlearn {
        #[command(flatten)]
        common: Common,
        /// Trained checkpoint; trains from scratch when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run label leakage on a checkpoint and write its gradient trace.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run all trials and write metrics.csv and summary.json.
    Experiment(Common),
    /// Time several methods on one shared scenario.
    Compare {
        /// One config per method; all must share data, model and seed.
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn model(cfg: &ExperimentConfig, data: &ExperimentData, checkpoint: Option<&Path>, rng: &mut ChaCha8Rng) -> Result<SplitFederation> {
    match checkpoint {
        Some(p) => {
            let (fed, _) = load_checkpoint(p)?;
            fed.with_privacy(cfg.privacy, cfg.seed)
        }
        None => train_original(cfg, data, rng, cfg.seed),
    }
}

fn report_accuracy(label: &str, cfg: &ExperimentConfig, data: &ExperimentData, fed: &SplitFederation) -> Result<()> {
    let acc = Evaluation::new(&data.test, &cfg.unlearn_classes)?.measure(fed)?;
    let all: Vec<usize> = (0..data.test.len()).collect();
    println!(
        "{label}: test {:.2}%  D_r {:.2}%  D_u {:.2}%  (unlearn classes: {})",
        accuracy(fed, &data.test, &all)?,
        acc.retained,
        acc.forgotten,
        class_list(&cfg.unlearn_classes)
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = load(&c.config, c.seed)?;
            let data = load_data(&cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let fed = train_original(&cfg, &data, &mut rng, cfg.seed)?;
            report_accuracy("trained", &cfg, &data, &fed)?;
            std::fs::create_dir_all(&cfg.output.dir).map_err(|e| vfu::Error::Io {
                path: cfg.output.dir.clone(),
                source: e,
            })?;
            let path = cfg.output.dir.join("original.ckpt");
            save_checkpoint(&fed, cfg.seed, &path)?;
            println!("checkpoint: {}", path.display());
        }
        Command::Unlearn { common, checkpoint } => {
            let cfg = load(&common.config, common.seed)?;
            let data = load_data(&cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let fed = model(&cfg, &data, checkpoint.as_deref(), &mut rng)?;
            report_accuracy("before", &cfg, &data, &fed)?;
            let out = apply_method(&cfg, &data, &fed, &mut rng, cfg.seed)?;
            report_accuracy("after", &cfg, &data, &out.model)?;
            println!("method {} took {:.3}s", cfg.method.name(), out.seconds);
            if let Some(r) = &out.report {
                println!("epochs run: {}  stopped early: {}", r.epochs_run, r.stopped_early);
            }
            std::fs::create_dir_all(&cfg.output.dir).map_err(|e| vfu::Error::Io {
                path: cfg.output.dir.clone(),
                source: e,
            })?;
            let path = cfg.output.dir.join("unlearned.ckpt");
            save_checkpoint(&out.model, cfg.seed, &path)?;
            println!("checkpoint: {}", path.display());
        }
        Command::Attack { common, checkpoint } => {
            let cfg = load(&common.config, common.seed)?;
            let data = load_data(&cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let fed = model(&cfg, &data, checkpoint.as_deref(), &mut rng)?;
            match leakage_trace(&cfg, &data, &fed)? {
                None => println!("method {} sends no per-sample gradients; nothing to cluster", cfg.method.name()),
                Some(trace) => {
                    let m_u = cfg.unlearn_classes.len();
                    let res = cluster_label_inference(&trace, m_u, cfg.attacks.leakage_restarts, cfg.seed)?;
                    println!("label leakage over {} gradients, m_u = {}: {:.2}%", trace.len(), m_u, res.accuracy);
                    std::fs::create_dir_all(&cfg.output.dir).map_err(|e| vfu::Error::Io {
                        path: cfg.output.dir.clone(),
                        source: e,
                    })?;
                    let path = cfg.output.dir.join("trace.bin");
                    write_trace(&path, &trace)?;
                    println!("trace: {}", path.display());
                }
            }
        }
        Command::Experiment(c) => {
            let cfg = load(&c.config, c.seed)?;
            let report = run_experiment(&cfg)?;
            for (phase, metrics) in &report.summary {
                let parts: Vec<String> = metrics.iter().map(|(k, s)| format!("{k} {:.2}±{:.2}", s.mean, s.std)).collect();
                println!("{phase}: {}", parts.join("  "));
            }
            if report.failed_trials > 0 {
                println!("{} trial(s) failed; see metrics.csv", report.failed_trials);
            }
            println!("written to {}", cfg.output.dir.display());
        }
        Command::Compare { config, seed } => {
            let cfgs = config.iter().map(|p| load(p, seed)).collect::<Result<Vec<_>>>()?;
            let table = compare_runtimes(&cfgs)?;
            println!("{:<24} {:<10} {:>10}", "config", "method", "seconds");
            for r in &table.rows {
                println!("{:<24} {:<10} {:>10.3}", r.name, r.method, r.seconds);
            }
            if let Some(s) = table.speedup_vs_retrain {
                println!("ours vs retrain: {s:.1}x faster");
            }
            if let Some(s) = table.speedup_vs_finetune {
                println!("ours vs finetune: {s:.1}x faster");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
