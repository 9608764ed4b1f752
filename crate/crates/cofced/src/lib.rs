//! Coarse-to-fine cascaded evidence distillation for explainable claim
//! verification.
//!
//! The pipeline reads claims paired with retrieved reports, annotates
//! report sentences with silver evidence labels (lexical overlap + embedding
//! similarity against a gold explanation), encodes everything with a
//! recurrent hierarchical encoder, selects the most check-worthy reports,
//! extracts explanation sentences from them with a redundancy-aware scorer,
//! and classifies claim veracity from the distilled evidence. Training
//! jointly optimizes the three stages with adaptive loss weighting.

pub mod annotator;
pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod metrics;
pub mod model;
pub mod report_selector;
pub mod sentence_selector;
pub mod training;
pub mod veracity;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid record: {message}")]
    Corpus {
        path: String,
        line: usize,
        message: String,
    },
    #[error("unknown label {label:?} for scheme {scheme:?}")]
    UnknownLabel { label: String, scheme: String },
    #[error("unknown label scheme {0:?}")]
    UnknownScheme(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sentence embedder failed: {0}")]
    Embedder(String),
    #[error("pretrained encoder adapter is not available in this context")]
    AdapterUnavailable,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at epoch {epoch}, case {case_id:?}: {message}")]
    Diverged {
        epoch: usize,
        case_id: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap an io error with the offending path for context.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub use annotator::{annotate_corpus, AnnotationConfig, AnnotationSummary, Thresholds};
pub use corpus::{
    generate_synthetic, load_corpus, save_corpus, split_cases, ClaimCase, LabelScheme, ReportDoc,
    Sentence,
};
pub use encoder::{build_embedder, EncoderConfig, EncoderKind, HashEmbedder, SentenceEmbedder};
pub use metrics::{ClassificationReport, ExplanationReport, MetricsDoc};
pub use model::{Forward, Model, ModelConfig};
pub use training::{
    fit, load_checkpoint, maw_update, save_checkpoint, Adam, LossRecord, TaskLosses, TrainConfig,
};



