//! Publication-type tagging for bibliographic citations.
//!
//! Records flow through [`text`] normalization, [`input`] assembly under a token budget,
//! a [`scorer::Scorer`], and the rule-driven [`compiler`]. [`corpus`] and [`partition`]
//! prepare training data; [`eval`] measures the result.

pub mod compiler;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod input;
pub mod partition;
pub mod pipeline;
pub mod scorer;
pub mod text;

pub use compiler::{compile_tags, CompilerPolicy, TagList};
pub use corpus::{Citation, LabelVocabulary};
pub use error::{Error, ErrorClass, Result};
pub use input::{assemble_input, ModelInput};
pub use scorer::{ScoreVector, Scorer, ScorerDescriptor};
pub use text::normalize_text;
