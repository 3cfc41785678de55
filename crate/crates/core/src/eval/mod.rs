//! Adversary classifier, autoencoder baseline, grouped F1 and the experiment suites.

mod adversary;
mod experiments;
mod metrics;
mod rae;

use thiserror::Error;

pub use adversary::{train_adversary, Adversary, AdversaryConfig};
pub use experiments::{
    description_ablation, few_shot_curve, run_dynamic_experiment, run_transform_experiment, write_fewshot_csv,
    AblationReport, DynamicReport, Experiment, ExperimentConfig, ExperimentData, FewShotCurve, FewShotPoint,
    SanitizeAudit, TransformReport, UtilityReport, held_out_pairs, synthetic_override_gray, synthetic_policy,
};
pub use metrics::{
    confusion_matrix, grouped_f1, macro_f1, mean_f1, per_class_f1, spearman, ExperimentReport, GroupScores,
};
pub use rae::{rae_train, rae_transform, Rae, RaeConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { what: String, epoch: usize, step: usize },
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Sanitizer(#[from] crate::sanitizer::SanitizerError),
    #[error("invalid policy: {0:?}")]
    Policy(Vec<crate::policy::PolicyIssue>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
