//! Machine reading framework.
//!
//! Extractive question answering, natural language inference and knowledge
//! graph link prediction share one data model ([`corpus`]), one reader
//! abstraction ([`framework`]) and one small autodiff engine ([`engine`]).
//! Models for the text tasks are written as declarative block pipelines
//! ([`dsl`]); task readers and link-prediction embeddings live in [`zoo`].

pub mod cli;
pub mod corpus;
pub mod dsl;
pub mod engine;
pub mod framework;
pub mod metrics;
pub mod par;
pub mod textpipe;
pub mod zoo;

pub use corpus::{Answer, Dataset, QASetting, Span, TripleStore};
pub use engine::{Tape, Tensor, Var};
pub use framework::Reader;
