//! The dual encoder: IMU tower plus text projection into a shared space,
//! contrastive training, class anchors, ranking and checkpoints.

mod checkpoint;
mod classify;
mod encoder;
mod loss;
mod similarity;
mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use classify::Classifier;
pub use encoder::{AttentionBlock, ImuClipModel, ModelConfig};
pub use loss::{supcon_loss, supcon_loss_raw, EmbeddingBatch, LossOutput, Modality, UNIT_NORM_TOLERANCE};
pub use similarity::{encode_class_anchor, similarity, top_k, Anchor, ClassAnchors, RankedClass, SimilarityRanking};
pub use train::{train, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no positive pairs in batch")]
    NoPositivePairs,
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("degenerate anchor for class `{0}`: descriptions cancel out")]
    DegenerateAnchor(String),
    #[error("text encoder mismatch: checkpoint was trained with `{expected}`, got `{actual}`")]
    EncoderMismatch { expected: String, actual: String },
    #[error("corpus has no descriptions for classes: {}", .0.join(", "))]
    CoverageGap(Vec<String>),
    #[error("non-finite loss at epoch {epoch}, step {step}: {loss}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint archive: {0}")]
    CorruptArchive(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
