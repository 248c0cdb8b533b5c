//! Ready-made readers: DSL-backed NLI and extractive QA readers, DistMult
//! and ComplEx link prediction, and generated toy datasets.

mod lp;
mod text;
pub mod toy;

pub use lp::{
    corrupt, evaluate_lp, load_lp, rank_all, rank_entities, rank_entities_with, save_lp,
    score_on_tape, train_lp, EmbeddingModel, LpBundle, LpError, LpTrainConfig, LpTrainReport, Side,
    ENTITIES_FILE, RELATIONS_FILE, TRIPLES_FILE,
};
pub use text::{
    best_span, gold_token_span, softmax, NliOutput, QaOutput, TextInput, MAX_SPAN_TOKENS,
};

use crate::dsl::{self, Dims, DslModel};
use crate::framework::{OutputModule, Reader, ReaderConfig, ReaderError, Task};

/// Reader for `task` whose model is the architecture `arch`.
pub fn text_reader(task: Task, arch: &str, config: ReaderConfig) -> Result<Reader, ReaderError> {
    let dims = Dims {
        repr_dim: config.repr_dim,
        repr_dim_input: config.repr_dim_input,
    };
    let graph = dsl::compile(arch, task, dims)?;
    let output: Box<dyn OutputModule> = match task {
        Task::Nli => Box::new(NliOutput),
        Task::Qa => Box::new(QaOutput),
        Task::Lp => return Err(dsl::DslError::UnsupportedTask(task.to_string()).into()),
    };
    Reader::assemble(
        task,
        Box::new(TextInput::new(task)),
        Box::new(DslModel::new(graph)),
        output,
        config,
    )
}

/// NLI reader over `arch`, or the shipped baseline when `None`.
pub fn nli_reader(arch: Option<&str>, config: ReaderConfig) -> Result<Reader, ReaderError> {
    text_reader(Task::Nli, arch.unwrap_or(dsl::NLI_BASELINE), config)
}

/// Extractive QA reader over `arch`, or the shipped baseline when `None`.
pub fn qa_reader(arch: Option<&str>, config: ReaderConfig) -> Result<Reader, ReaderError> {
    text_reader(Task::Qa, arch.unwrap_or(dsl::QA_SPAN_BASELINE), config)
}
