//! Topic clustering for short-text corpora.
//!
//! A truncated hierarchical Dirichlet process estimates a topic count, which
//! is then refined by repeatedly refitting LDA on the number of topics that
//! actually dominate at least one document until every specified topic is
//! used.

pub mod cli;
pub mod corpus;
pub mod dirichlet;
pub mod error;
pub mod evalmetrics;
pub mod experiments;
pub mod hdp;
pub mod lda;
pub mod recursor;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
