//! Instances, datasets and their on-disk formats.

mod arde;
mod featurize;
mod instance;
mod jsonl;
mod synthetic;
mod variant;

pub use arde::{
    read_embeddings_bin, write_embeddings_bin, EmbeddingMatrix, ARDE_MAGIC, ARDE_VERSION,
};
pub use featurize::hash_featurize;
pub use instance::{Dataset, Instance, Span};
pub use jsonl::{load_jsonl, write_jsonl, write_jsonl_with_sidecar};
pub use synthetic::{gen_synthetic, SyntheticSpec};
pub use variant::{
    make_imbalanced_variant, make_noisy_variant, split_novel, VariantKind, VariantSpec,
};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("instance {id}: head_vec has length {head} but tail_vec has length {tail}")]
    VectorLengthMismatch {
        id: String,
        head: usize,
        tail: usize,
    },
    #[error("instance {id}: dimension {found} differs from dataset dimension {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("instance {id}: {message}")]
    InvalidInstance { id: String, message: String },
    #[error("bad magic {0:?}, expected \"ARDE\"")]
    BadMagic([u8; 4]),
    #[error("unsupported embedding file version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated embedding payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("empty dataset")]
    Empty,
    #[error("invalid variant spec: {0}")]
    InvalidVariant(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSynthetic(String),
    #[error("could not place {classes} class centers {separation} apart in dimension {dim} within {attempts} attempts")]
    SeparationInfeasible {
        classes: usize,
        separation: f64,
        dim: usize,
        attempts: usize,
    },
    #[error("featurizer dimension {0} is below the minimum of 8")]
    DimTooSmall(usize),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}
