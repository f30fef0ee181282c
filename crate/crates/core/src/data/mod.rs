//! Dataset ingestion, vertical partitioning and on-disk formats.

mod checkpoint;
mod codec;
mod dataset;
mod idx;
mod synth;
mod trace;

pub use checkpoint::{decode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{vertical_partition, Dataset, Split, VerticalDataset};
pub use idx::{load_idx, load_mnist, read_idx, write_idx, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synth::synth_blobs;
pub use trace::{decode_trace, encode_trace, read_trace, write_trace, TRACE_MAGIC, TRACE_VERSION};
