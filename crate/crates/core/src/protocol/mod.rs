//! Vertical federated protocol: id alignment, party state machines, the
//! lock-step training loop and inference.

mod align;
mod federation;
mod party;
mod train;

pub use align::align_ids;
pub use federation::{FederationSpec, SplitFederation, StepOutput};
pub use party::{ActiveParty, MessageKind, PassiveParty, RoundMessage};
pub use train::{accuracy, train, train_epoch, EpochStats, TrainConfig};
