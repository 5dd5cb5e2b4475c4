//! Dense 64-bit neural networks for short multivariate sequences.
//!
//! Two architectures share one interface: a tanh MLP over the flattened
//! window and a single-layer LSTM whose final hidden state feeds a small tanh
//! head. Both end in a sigmoid layer, are trained with a hinge-norm loss and
//! plain SGD, and round-trip bit-exactly through a checkpoint file.

mod checkpoint;
mod features;
mod linear;
mod loss;
mod lstm;
mod mlp;
mod network;
mod sgd;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, FORMAT_VERSION};
pub use features::{FeatureMode, FeatureSpec, Normalizer};
pub use linear::Linear;
pub use loss::{hinge_loss, hinge_loss_grad};
pub use lstm::{LstmConfig, LstmNetwork};
pub use mlp::{MlpConfig, MlpNetwork};
pub use network::{Architecture, Gradients, Network};
pub use sgd::{sgd_step, SgdConfig};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match the requested features: {0}")]
    SpecMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
