//! Deterministic dense numerics: tensors, MLPs with hand-written backprop,
//! soft-target cross-entropy and signed SGD.

mod layer;
mod loss;
mod optim;
mod tensor;

pub use layer::{Activation, DenseLayer, ForwardCache, LayerGrads, Mlp, MlpGrads};
pub use loss::{softmax, softmax_cross_entropy};
pub use optim::{sgd_step, Direction, Sgd, SgdConfig};
pub use tensor::Tensor;
