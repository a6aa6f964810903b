//! Anchor-first navigation over long structured documents.
//!
//! A layout interchange payload is parsed into a [`DocumentRecord`] of
//! anchors (paragraphs, headings, table cells). Each record gets a BM25 index
//! over anchors, a late-interaction index over sliding windows of anchors,
//! and precomputed extractive synopses. Commands are routed grammar-first
//! into typed intents and answered with anchor ids only.

pub mod align;
pub mod config;
pub mod dense;
pub mod engine;
pub mod eval;
pub mod fusion;
pub mod ingest;
pub mod lexical;
pub mod router;
pub mod synopsis;
pub mod synthetic;
pub mod text;
pub mod tokenize;

pub use align::{align_fuzzy, align_offset, AlignError, AlignMethod, AlignmentResult};
pub use config::AppConfig;
pub use dense::{score_maxsim, DenseError, DenseIndex, EmbeddingProvider, HashedTrigramProvider, TokenMatrix};
pub use engine::{DocumentIndex, EngineConfig, EngineError, Retrieval};
pub use fusion::{decide, fuse, normalize_scores, Candidate, FusionConfig, FusionOverrides, RetrievalDecision};
pub use ingest::{
    build_windows, parse_layout, parse_layout_json, Anchor, AnchorKind, BBox, CharRange, DocumentRecord,
    IngestError, LayoutPayload, TableRef, Window, WindowConfig,
};
pub use lexical::{build_lexical, Bm25Params, LexicalIndex};
pub use router::{BackoffClient, BackoffError, BackoffRequest, BackoffResponse, Intent, IntentKind, Router, StubBackoff};
pub use synopsis::{build_synopsis, ScopeConfig, Synopsis, SynopsisLine};
pub use text::normalize_text;
pub use tokenize::Tokenizer;
