//! Experiment harness: TOML configs, the train → unlearn → attack pipeline,
//! metric reports and runtime comparison. Backs the `vfu` binary.

mod config;
mod runner;

pub use config::{
    AttackSection, DataSection, DatasetKind, ExperimentConfig, Method, ModelSection, OutputSection, Scenario,
    UnlearnSection,
};
pub use runner::{
    apply_method, class_list, compare_runtimes, federation_spec, finish_trial, finish_trials, leakage_trace, load_data,
    run_experiment, run_trial, run_trials, train_original, train_trial, ExperimentData, MethodOutcome, MetricsReport,
    MetricsRow, RuntimeRow, RuntimeTable, Stat, TrainedTrial, CSV_COLUMNS, SUMMARY_SCHEMA_VERSION,
};
