//! WER scoring and the experiment matrix.
//!
//! An [`ExperimentSpec`] names a representation type (discrete or continuous,
//! unsupervised or supervised), an encoder layer, the cluster count or prompt
//! method where relevant, a toy-LM configuration and a list of seeds.
//! [`run_matrix`] builds each representation over a [`Dataset`], trains a
//! fresh toy LM per seed to transcribe it, and reports seed-averaged WER on
//! the two test splits (low and high noise).

mod dataset;
mod runner;
mod wer;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use dataset::{word_list, Dataset, Split, TaskConfig, Utterance, CTC_SOURCE, SPLITS};
pub use runner::{
    load_specs, run_matrix, run_spec, Artifacts, DecodingConfig, ExperimentSpec, MatrixReport,
    RepType, ReportRow, SpecResult, TrainingConfig, REPORT_HEADER,
};
pub use wer::{wer, WerReport};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference has no words")]
    EmptyReference,
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    FeatIo(#[from] crate::featio::FeatIoError),
    #[error(transparent)]
    Quantizer(#[from] crate::quantizer::QuantizerError),
    #[error(transparent)]
    NGram(#[from] crate::ngram::NGramError),
    #[error(transparent)]
    Ctc(#[from] crate::ctcfront::CtcError),
    #[error(transparent)]
    Lm(#[from] crate::toylm::LmError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EvalError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;
