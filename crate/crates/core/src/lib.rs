//! Labeling, training-data construction and evaluation for peer-review feedback.
//!
//! Feedback is judged from the author's side: a critique counts as successful when the
//! authors agree it is valid and commit to acting on it. The crate is organised around
//! that signal:
//!
//! - [`domain`] holds the label taxonomies and the success indicator.
//! - [`ingest`] loads paper records, review threads and annotation files.
//! - [`judge`] is the only gateway to model inference (chat judging and embeddings),
//!   with a persistent cache and a deterministic stub backend.
//! - [`parse`] turns review threads into labeled feedback units.
//! - [`forge`] builds SFT examples, corruption variants and DPO preference pairs.
//! - [`consensus`] builds multi-reviewer consensus sets and scores generated feedback.
//! - [`successeval`] computes the success-rate proxy with bootstrap intervals.
//! - [`stats`] carries the agreement coefficients and significance tests.

pub mod consensus;
pub mod domain;
pub mod error;
pub mod exec;
pub mod forge;
pub mod ingest;
pub mod judge;
pub mod parse;
pub mod stats;
pub mod successeval;

pub use error::{Error, Result};
