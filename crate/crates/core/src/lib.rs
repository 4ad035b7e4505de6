//! Hybrid retrieval-augmented answering for Arabic multiple-choice questions.
//!
//! The retrieval cascade runs BM25 over fully normalized tokens, narrows the
//! candidates by embedding cosine over lightly normalized text, and reranks
//! the survivors with a pair scorer before the top passages are placed in
//! the prompt.

pub mod textnorm;
pub mod corpus;
pub mod passage;
pub mod provider;
pub mod sparse;
pub mod dense;
pub mod rerank;
pub mod ragflow;
pub mod evalharness;
pub mod remote;
