//! Corpus bootstrapping for short opinionated texts annotated by several
//! people.
//!
//! The crate takes a small set of noisy, multi-annotator polarity/aspect
//! judgments and turns it into a large, consistent labeled corpus:
//!
//! * [`corpus`] holds documents, annotation records, the gold store and its
//!   correction ledger.
//! * [`textproc`] normalizes and tokenizes texts and computes tf-idf and Gini
//!   term weights; it also owns the hashtag and nickname lexicons.
//! * [`classifiers`] trains class profiles and scores documents with cosine,
//!   Jaccard, kNN, Poisson and bigram Markov scorers.
//! * [`committee`] normalizes and fuses classifier scores and decides whether
//!   the classifiers agree.
//! * [`harmonize`] runs the rule and committee correction cascade.
//! * [`propagate`] drives the train / classify / confirm loop over unlabeled
//!   pools.
//! * [`metrics`] computes confusion-matrix scores and corpus reports.
//! * [`service`] is the in-process annotation task server used by the HTTP
//!   front-end.
//! * [`synth`] generates synthetic corpora with planted vocabularies.

pub mod classifiers;
pub mod committee;
pub mod config;
pub mod corpus;
pub mod error;
pub mod harmonize;
pub mod metrics;
pub mod propagate;
pub mod service;
pub mod synth;
pub mod textproc;

pub use classifiers::{ClassifierKind, DocFeatures, ModelSet, ScoreVector};
pub use committee::{Agreement, Committee, CommitteeVerdict, FusionConfig};
pub use config::Config;
pub use corpus::{
    AnnotationRecord, AspectLabel, CorpusStore, CorrectionEvent, Document, GoldLabel, GoldStore, LabelPair, Mode,
    Polarity, Provenance, RawPolarity, Task,
};
pub use error::{Error, Result};
pub use harmonize::{CascadeOutcome, ReviewItem, ReviewReason};
pub use metrics::ConfusionMatrix;
pub use propagate::{LoopState, ReviewOutcome};
pub use textproc::{BowVector, Lexicons, TermStats, TokenStream};
