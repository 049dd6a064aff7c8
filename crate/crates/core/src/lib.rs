//! Task-routed hybrid retrieval-augmented generation for scholarly assistance.
//!
//! A query is routed to one of four tasks ([`router::TaskLabel`]), evidence is
//! gathered from a chunked paper corpus, a single grounded paper, or a scholarly
//! knowledge graph, and a composed prompt is sent to a completion backend whose
//! reply is parsed into an answer with verified numeric citations.
//!
//! The [`evalkit`] module carries the evaluation metrics used to score answers:
//! citation precision/recall/F1, yes/maybe/no accuracy and macro-F1, ROUGE,
//! compression ratio and aggregate SMOG readability.

pub mod compose;
pub mod corpus;
pub mod embedding;
pub mod evalkit;
pub mod generate;
pub mod grounding;
pub mod kgfact;
pub mod pipeline;
pub mod router;
pub mod text;
pub mod vindex;

pub use compose::{BibEntry, ComposedPrompt, EvidenceItem, EvidenceKind, EvidenceSet};
pub use corpus::{Chunk, Corpus, PaperDocument};
pub use embedding::{Embedder, EmbeddingVector, HashEmbedder};
pub use generate::{CompletionBackend, GeneratedAnswer};
pub use pipeline::{Pipeline, PipelineError, PipelineSettings};
pub use router::{RoutingDecision, TaskLabel};
pub use vindex::{SearchHit, VectorIndex};
