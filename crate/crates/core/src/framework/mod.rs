//! Reader skeleton: typed tensor ports, the input/model/output module
//! interfaces, signature validation, the training loop with hooks, and
//! save/load.

mod config;
mod hooks;
pub(crate) mod persist;
pub mod ports;
mod reader;

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

pub use config::{LpConfig, LpKind, ReaderConfig, Task};
pub use hooks::{EvalHook, Hook, HookEvent, HookKind, LossHook, MisclassificationHook};
pub use persist::{load, save, FORMAT_VERSION};
pub use ports::{ModuleSignature, TensorPort};
pub use reader::{misclassification_report, AnnotatedExample, Prediction, Reader, TrainingReport};

use crate::corpus::{CorpusError, Dataset};
use crate::dsl::DslError;
use crate::engine::{BoundParams, EngineError, ParamStore, Tape, Tensor, Var};
use crate::metrics::MetricsError;
use crate::textpipe::{Batch, TextError, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum ReaderError {
    #[error("port {port:?} required by {consumer} is not produced by any of [{}]", producers.join(", "))]
    PortMismatch {
        port: String,
        producers: Vec<String>,
        consumer: String,
    },
    #[error("reader must be set up before training or answering")]
    NotSetup,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("saved with format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("reader does not expose gold-answer probabilities")]
    NotClassification,
    #[error("invalid probability interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("no training instance has an answer span covering at least one token")]
    NoValidSpan,
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Turns raw datasets into batches of named tensors.
pub trait InputModule: Send + Sync {
    fn name(&self) -> &str;
    fn output_ports(&self) -> Vec<TensorPort>;
    /// Extra ports emitted only for training batches.
    fn training_ports(&self) -> Vec<TensorPort>;
    /// Builds the vocabulary from training data.
    fn setup(&mut self, train: &Dataset, config: &ReaderConfig) -> Result<(), ReaderError>;
    fn vocab(&self) -> Option<&Vocab>;
    fn set_vocab(&mut self, vocab: Vocab);
    fn batches(
        &self,
        data: &Dataset,
        batch_size: usize,
        shuffle_seed: Option<u64>,
        training: bool,
    ) -> Result<Vec<Batch>, ReaderError>;
}

/// The trainable function from input ports to output ports.
pub trait ModelModule: Send + Sync {
    fn name(&self) -> &str;
    fn signature(&self) -> ModuleSignature;
    /// Allocates parameters for `vocab`.
    fn setup(
        &mut self,
        vocab: &Vocab,
        embeddings: Option<&Tensor>,
        seed: u64,
    ) -> Result<(), ReaderError>;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        batch: &Batch,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<BTreeMap<String, Var>, ReaderError>;
    /// Scalar training loss from forward outputs and training ports.
    fn loss(
        &self,
        tape: &mut Tape,
        outputs: &BTreeMap<String, Var>,
        batch: &Batch,
    ) -> Result<Var, ReaderError>;
    /// Architecture text written next to a saved checkpoint.
    fn arch_text(&self) -> String;
}

/// Turns model outputs into answers.
pub trait OutputModule: Send + Sync {
    fn name(&self) -> &str;
    fn input_ports(&self) -> Vec<TensorPort>;
    fn decode(
        &self,
        data: &Dataset,
        batch: &Batch,
        outputs: &BTreeMap<String, Tensor>,
    ) -> Result<Vec<Prediction>, ReaderError>;
}
