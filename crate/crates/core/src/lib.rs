//! Query-driven topic modeling.
//!
//! A query is expanded into concept words by pseudo-relevance feedback over a
//! query-likelihood retrieval run. The concept words anchor one parent topic
//! in a constrained HDP Gibbs sampler, optionally with embedding-driven
//! Generalized Pólya Urn promotion. A second sampler run over the parent's
//! tokens splits it into subtopics.

pub mod concept;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
