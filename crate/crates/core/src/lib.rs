//! Evaluation harness for medical question-answering language models.
//!
//! The crate is organised around the stages of an evaluation:
//!
//! - [`dataset`] ingests multiple-choice and long-form benchmark files and
//!   defines the shared domain types.
//! - [`backends`] is the uniform interface to text-generation models, with an
//!   HTTP adapter and a deterministic scripted mock.
//! - [`prompting`] assembles few-shot and chain-of-thought prompts and runs
//!   self-consistency and ensemble refinement.
//! - [`benchmark`] runs a strategy over a dataset and renders accuracy tables.
//! - [`overlap`] scans benchmark questions for verbatim overlap with a
//!   training corpus.
//! - [`stats`] holds the bootstrap, permutation, kappa and binomial machinery
//!   used to analyse human ratings.
//! - [`study`] is the blinded rating-study service: task assignment, rating
//!   capture and export.
//!
//! The guide in `book/` walks through each of these with runnable snippets;
//! those snippets are compiled and run as doc-tests of this crate.

pub mod backends;
pub mod benchmark;
pub mod dataset;
pub mod digest;
pub mod lengths;
pub mod overlap;
pub mod prompting;
pub mod stats;
pub mod study;

pub use dataset::{
    Answer, Dataset, DatasetManifest, DatasetTag, Letter, LongFormQuestion, LongFormSource,
    MultipleChoiceQuestion, Producer, Split,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/prompting.md")]
    mod prompting {}
    #[doc = include_str!("../../../book/src/ensemble-refinement.md")]
    mod ensemble_refinement {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
    #[doc = include_str!("../../../book/src/overlap.md")]
    mod overlap {}
    #[doc = include_str!("../../../book/src/bootstrap.md")]
    mod bootstrap {}
    #[doc = include_str!("../../../book/src/permutation.md")]
    mod permutation {}
    #[doc = include_str!("../../../book/src/agreement.md")]
    mod agreement {}
    #[doc = include_str!("../../../book/src/study.md")]
    mod study {}
}
