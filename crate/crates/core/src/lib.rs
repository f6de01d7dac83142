//! Concentrated document topic model.
//!
//! LDA extended with a per-document entropy penalty on the topic proportions,
//! fit by penalized variational EM. With every penalty weight set to zero the
//! model is plain LDA. Evaluation covers C_V coherence over sliding windows,
//! held-out perplexity and document-topic entropy statistics.
//!
//! Module map:
//! - [`specialfn`]: log-gamma, digamma, trigamma, tetragamma and Dirichlet expectations
//! - [`corpus`]: tokenization, vocabulary, encoded documents, splits, window counts
//! - [`model`]: parameter containers, configuration, persistence
//! - [`inference`]: E-step (phi update, coordinate Newton on gamma), M-step, ELBO, perplexity
//! - [`eval`]: entropy statistics, NPMI, C_V coherence, grid selection
//! - [`synthetic`]: corpora sampled from a known topic model

pub mod corpus;
pub mod error;
pub mod eval;
pub mod inference;
pub mod model;
pub mod specialfn;
pub mod stopwords;
pub mod synthetic;

pub use corpus::{Corpus, CorpusConfig, Document, TokenizerConfig, Vocabulary, WindowCounts, WordId};
pub use error::{Error, Result};
pub use eval::{CoherenceReport, EntropyStats, GridOptions, GridResult, TopicTopWords};
pub use inference::{ElboBreakdown, EStepStats, FitResult};
pub use model::{DocVariational, ModelParams, Penalty, Reduction, TrainConfig};

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}
