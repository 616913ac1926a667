//! Dense feed-forward networks with analytic backpropagation.
//!
//! Sized for small heads: a projection layer, a softmax classifier and a
//! three-layer discriminator. All arithmetic is `f64`.

mod checkpoint;
mod loss;
mod net;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, ARDP_MAGIC, ARDP_VERSION};
pub use loss::{log_softmax, softmax_cross_entropy};
pub use net::{Activation, Cache, DenseNet, Gradients, Layer};
pub use optim::{OptKind, Optimizer};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
