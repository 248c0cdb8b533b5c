//! Tokenization with character offsets, vocabularies, padded batches and
//! pre-trained embedding tables.

mod batch;
mod embeddings;
mod tokenize;
mod vocab;

pub use batch::{
    batch_of, encode, make_batches, Batch, Batches, Encoded, SupportToken, CHAR_BUCKETS,
    MAX_WORD_CHARS,
};
pub use embeddings::{load_embeddings, parse_embeddings, random_table, Embeddings, INIT_RANGE};
pub use tokenize::{char_span_to_tokens, tokenize, tokens_to_char_span, Token, EDGE_PUNCT};
pub use vocab::{build_vocab, build_vocab_with, Vocab, PAD, PAD_ID, UNK, UNK_ID};

/// Port names emitted by batching.
pub mod keys {
    pub const QUESTION: &str = "question";
    pub const SUPPORT: &str = "support";
    pub const CHAR_QUESTION: &str = "char_question";
    pub const CHAR_SUPPORT: &str = "char_support";

    pub fn length(seq: &str) -> String {
        format!("{seq}_length")
    }

    pub fn mask(seq: &str) -> String {
        format!("{seq}_mask")
    }

    pub fn chars(seq: &str) -> String {
        format!("char_{seq}")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("line {line}: expected {expected} dimensions, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("vocabulary must be frozen before batching")]
    VocabNotFrozen,
    #[error("batch size must be positive")]
    InvalidBatchSize,
    #[error("batch has no port {0:?}")]
    MissingPort(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
