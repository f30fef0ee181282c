//! Few-shot label unlearning: vertical manifold mixup over forward
//! embeddings, then gradient ascent on the top and bottom models.
//! Also the retrain, fine-tune, amnesiac and plain-ascent baselines.

mod baselines;
mod method;
mod mixup;

pub use baselines::{amnesiac, finetune, gradient_ascent, random_wrong_label, retrain, RepairConfig};
pub use method::{
    build_mixed_batch, unlearn, unlearn_step, Accuracies, Evaluation, MixedBatch, ProbeSet, UnlearnConfig,
    UnlearnReport,
};
pub use mixup::{mix, LambdaSampler, MixConfig, MixPlan, PairScope};
