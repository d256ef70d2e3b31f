//! Metamorphic testing for NLP models.
//!
//! Source texts are drawn from an unlabeled [`Dataset`], turned into
//! follow-up inputs by [`transforms`], scored through a [`adapters::ModelPort`],
//! and checked against first-order output [`properties`]. The [`relations`]
//! module describes the four relation shapes (single-input, pairwise
//! systematicity, pairwise compositionality, three-way transitivity) and
//! renders them as graphs; [`engine`] enumerates test tuples and aggregates
//! verdicts into violation reports.

pub mod adapters;
pub mod engine;
mod error;
pub mod hash;
pub mod probe;
pub mod properties;
pub mod relations;
pub mod report;
pub mod transforms;
pub mod types;

pub use error::CoreError;
pub use types::{cosine_similarity, predicted_class, Dataset, ScoreKind, ScoreVector, Span, TextInput, ViewKind, ViewRequest};
