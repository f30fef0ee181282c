//! Adversary-side evaluation: label leakage by clustering the per-sample
//! gradients a passive party receives, membership inference, and passive
//! model completion.

mod cluster;
mod completion;
mod mia;
mod trace;

pub use cluster::{best_assignment, cluster_label_inference, kmeans, matched_accuracy, Clustering, LeakageResult};
pub use completion::{model_completion_attack, CompletionConfig, CompletionResult};
pub use mia::{confidence_scores, mia_asr, mia_fit, MiaFeature, MiaKind, MiaModel, MiaOutcome, ScoredSet};
pub use trace::{collect_unlearn_gradients, GradientHook, GradientTrace};
