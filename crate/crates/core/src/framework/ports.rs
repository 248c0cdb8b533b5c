//! Tensor ports: named placeholders with symbolic dims and a dtype.

use std::fmt;

use crate::engine::DType;
use crate::textpipe::keys;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorPort {
    pub name: String,
    pub dims: Vec<String>,
    pub dtype: DType,
    pub doc: String,
}

impl TensorPort {
    pub fn new(
        name: impl Into<String>,
        dims: &[&str],
        dtype: DType,
        doc: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            dims: dims.iter().map(|d| d.to_string()).collect(),
            dtype,
            doc: doc.into(),
        }
    }

    /// Same name, same dim names, same dtype. Sizes are checked at run time.
    pub fn compatible(&self, other: &TensorPort) -> bool {
        self.name == other.name && self.dims == other.dims && self.dtype == other.dtype
    }
}

impl fmt::Display for TensorPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[{}]:{}",
            self.name,
            self.dims.join(", "),
            self.dtype.as_str()
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModuleSignature {
    pub input_ports: Vec<TensorPort>,
    pub output_ports: Vec<TensorPort>,
    pub training_input_ports: Vec<TensorPort>,
    pub training_output_ports: Vec<TensorPort>,
}

pub fn question() -> TensorPort {
    TensorPort::new(
        keys::QUESTION,
        &["batch", "q_len"],
        DType::I64,
        "question token ids",
    )
}

pub fn support() -> TensorPort {
    TensorPort::new(
        keys::SUPPORT,
        &["batch", "support_len"],
        DType::I64,
        "support token ids",
    )
}

pub fn question_length() -> TensorPort {
    TensorPort::new(
        keys::length(keys::QUESTION),
        &["batch"],
        DType::I64,
        "question lengths",
    )
}

pub fn support_length() -> TensorPort {
    TensorPort::new(
        keys::length(keys::SUPPORT),
        &["batch"],
        DType::I64,
        "support lengths",
    )
}

pub fn question_mask() -> TensorPort {
    TensorPort::new(
        keys::mask(keys::QUESTION),
        &["batch", "q_len"],
        DType::F64,
        "1 for real question tokens",
    )
}

pub fn support_mask() -> TensorPort {
    TensorPort::new(
        keys::mask(keys::SUPPORT),
        &["batch", "support_len"],
        DType::F64,
        "1 for real support tokens",
    )
}

pub fn char_question() -> TensorPort {
    TensorPort::new(
        keys::CHAR_QUESTION,
        &["batch", "q_len", "word_len"],
        DType::I64,
        "question character ids",
    )
}

pub fn char_support() -> TensorPort {
    TensorPort::new(
        keys::CHAR_SUPPORT,
        &["batch", "support_len", "word_len"],
        DType::I64,
        "support character ids",
    )
}

pub fn label() -> TensorPort {
    TensorPort::new("label", &["batch"], DType::I64, "gold class index")
}

pub fn answer_start() -> TensorPort {
    TensorPort::new("answer_start", &["batch"], DType::I64, "gold start token")
}

pub fn answer_end() -> TensorPort {
    TensorPort::new(
        "answer_end",
        &["batch"],
        DType::I64,
        "gold end token, inclusive",
    )
}

pub fn logits() -> TensorPort {
    TensorPort::new(
        "logits",
        &["batch", "classes"],
        DType::F64,
        "unnormalised class scores",
    )
}

pub fn start_scores() -> TensorPort {
    TensorPort::new(
        "start_scores",
        &["batch", "support_len"],
        DType::F64,
        "span start scores",
    )
}

pub fn end_scores() -> TensorPort {
    TensorPort::new(
        "end_scores",
        &["batch", "support_len"],
        DType::F64,
        "span end scores",
    )
}

pub fn loss() -> TensorPort {
    TensorPort::new("loss", &[], DType::F64, "scalar training loss")
}

/// Every port a text input module emits, keyed by name.
pub fn text_inputs() -> Vec<TensorPort> {
    vec![
        question(),
        question_length(),
        question_mask(),
        char_question(),
        support(),
        support_length(),
        support_mask(),
        char_support(),
    ]
}
