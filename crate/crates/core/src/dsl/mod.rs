//! Declarative architectures: a structured-text list of building blocks,
//! wired together through named keys, compiled into a shape-checked graph
//! and instantiated as a trainable model.
//!
//! ```yaml
//! - type: embed
//!   input: question
//!   output: q_emb
//! - type: pool
//!   input: q_emb
//!   output: q_vec
//! ```
//!
//! Each block reads the keys in `input` and writes `output`, which defaults
//! to its first input. Keys must be written before they are read and may be
//! written only once. The start keys are `question`, `support`,
//! `char_question` and `char_support`; padding masks follow every key derived
//! from a question or support sequence.

mod graph;
mod model;
mod spec;
pub mod yaml;

pub use graph::{build_graph, compile, ArchGraph, Dim, Dims, KeyInfo, KeyKind};
pub use model::{instantiate, Activation, DslModel};
pub use spec::{parse_arch, suggest, Arity, BlockSpec, BlockType, Scalar};

use crate::engine::EngineError;

/// Shipped architecture for three-way NLI.
pub const NLI_BASELINE: &str = include_str!("../../configs/nli_baseline.yaml");
/// Shipped architecture for extractive QA.
pub const QA_SPAN_BASELINE: &str = include_str!("../../configs/qa_span_baseline.yaml");

#[derive(Debug, thiserror::Error)]
pub enum DslError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error(
        "block {index} (line {line}): unknown block type {name:?}, did you mean {suggestion:?}?"
    )]
    UnknownBlock {
        name: String,
        suggestion: &'static str,
        index: usize,
        line: usize,
    },
    #[error("block {index} (line {line}): {block} takes {expected} input keys, got {found}")]
    BadArity {
        block: BlockType,
        expected: String,
        found: usize,
        index: usize,
        line: usize,
    },
    #[error("block {index} (line {line}): {block} hyperparameter {name:?}: {message}")]
    BadHyperparam {
        block: BlockType,
        name: String,
        message: String,
        index: usize,
        line: usize,
    },
    #[error("block {index} (line {line}): key {key:?} is not defined before use")]
    UndefinedKey {
        key: String,
        index: usize,
        line: usize,
    },
    #[error("block {index} (line {line}): key {key:?} is already defined by {previous}")]
    KeyRedefinition {
        key: String,
        previous: String,
        index: usize,
        line: usize,
    },
    #[error("block {index} (line {line}): expected {expected}, found {found}")]
    ShapeError {
        expected: String,
        found: String,
        index: usize,
        line: usize,
    },
    #[error("missing terminal key {key:?} with shape {expected}")]
    MissingTerminal { key: String, expected: String },
    #[error("architectures describe qa or nli models, not {0}")]
    UnsupportedTask(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl DslError {
    /// Block index the error is attached to, if any.
    pub fn block_index(&self) -> Option<usize> {
        match self {
            DslError::UnknownBlock { index, .. }
            | DslError::BadArity { index, .. }
            | DslError::BadHyperparam { index, .. }
            | DslError::UndefinedKey { index, .. }
            | DslError::KeyRedefinition { index, .. }
            | DslError::ShapeError { index, .. } => Some(*index),
            _ => None,
        }
    }
}
