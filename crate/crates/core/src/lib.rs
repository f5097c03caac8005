//! Retrieval-augmented wound-care visual question answering.
//!
//! The crate covers the whole offline pipeline: loading and canonicalizing an
//! encounter corpus, embedding and exemplar retrieval, prompt assembly,
//! generation against a chat endpoint (or a deterministic stub),
//! normalization of raw generations into structured predictions, lexical
//! evaluation and gold-free error analysis.

pub mod analysis;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod generation;
pub mod media;
pub mod pipeline;
pub mod postprocess;
pub mod prompting;
pub mod retrieval;
pub mod retry;
