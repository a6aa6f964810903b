//! Per-document indexes and the retrieval pipeline over them.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::DEFAULT_TOLERANCE;
use crate::dense::{DenseError, DenseIndex, EmbeddingProvider, HashedTrigramProvider};
use crate::fusion::{decide, fuse, normalize_scores, Candidate, DenseLeg, FusionConfig, LexicalLeg, RetrievalDecision};
use crate::ingest::{build_windows, AnchorKind, DocumentRecord, IngestError, WindowConfig};
use crate::lexical::{build_lexical_with, Bm25Params, LexicalError, LexicalIndex};
use crate::router::{Filters, TemporalSlots};
use crate::synopsis::{build_with_centrality, Centrality, ScopeConfig, Synopsis, SynopsisError, DEFAULT_LINES};
use crate::tokenize::Tokenizer;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Lexical(#[from] LexicalError),
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Synopsis(#[from] SynopsisError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub fusion: FusionConfig,
    pub bm25: Bm25Params,
    pub window: WindowConfig,
    pub tolerance: f64,
    pub synopsis_lines: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            bm25: Bm25Params::default(),
            window: WindowConfig::default(),
            tolerance: DEFAULT_TOLERANCE,
            synopsis_lines: DEFAULT_LINES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    pub candidates: Vec<Candidate>,
    pub decision: RetrievalDecision,
    /// The dense leg was requested but its provider failed.
    pub degraded: bool,
}

pub struct DocumentIndex {
    pub record: DocumentRecord,
    pub lexical: LexicalIndex,
    pub dense: DenseIndex,
    pub synopses: BTreeMap<String, Synopsis>,
    pub tokenizer: Tokenizer,
    provider: Arc<dyn EmbeddingProvider>,
}

impl std::fmt::Debug for DocumentIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DocumentIndex")
            .field("doc_id", &self.record.doc_id)
            .field("anchors", &self.record.anchors.len())
            .field("windows", &self.dense.len())
            .field("provider", &self.provider.name())
            .finish()
    }
}

pub fn builtin_provider() -> Arc<dyn EmbeddingProvider> {
    Arc::new(HashedTrigramProvider::default())
}

impl DocumentIndex {
    pub fn build(
        mut record: DocumentRecord,
        cfg: &EngineConfig,
        provider: Arc<dyn EmbeddingProvider>,
        scopes: &ScopeConfig,
        built_at: u64,
    ) -> Result<Self, EngineError> {
        record.windows = build_windows(&record, cfg.window.width, cfg.window.stride)?;
        let tokenizer = Tokenizer::default();
        let lexical = build_lexical_with(&record, cfg.bm25, tokenizer.clone())?;
        let dense = DenseIndex::build(&record.windows, &tokenizer, provider.as_ref())?;
        let centrality = Centrality::compute(&record, &lexical)?;
        let mut synopses = BTreeMap::new();
        for scope in scopes.names() {
            let s = build_with_centrality(&record, &centrality, scopes, scope, cfg.synopsis_lines, built_at)?;
            synopses.insert(scope.to_string(), s);
        }
        Ok(Self { record, lexical, dense, synopses, tokenizer, provider })
    }

    /// Built-in provider, default scopes, `built_at` = 0.
    pub fn with_defaults(record: DocumentRecord, cfg: &EngineConfig) -> Result<Self, EngineError> {
        Self::build(record, cfg, builtin_provider(), &ScopeConfig::default(), 0)
    }

    pub fn doc_id(&self) -> &str {
        &self.record.doc_id
    }

    pub fn synopsis(&self, scope: &str) -> Option<&Synopsis> {
        self.synopses.get(scope)
    }

    pub fn anchor_id(&self, position: usize) -> &str {
        &self.record.anchors[position].anchor_id
    }

    /// Hybrid retrieval. A leg whose weight is zero is not consulted.
    pub fn retrieve(&self, query: &str, filters: &Filters, cfg: &FusionConfig) -> Retrieval {
        if let Some(region) = &filters.table_region {
            return self.retrieve_cell(&region.table_id, region.row, region.col);
        }
        let k = cfg.top_k;
        let lexical = if cfg.alpha > 0.0 {
            let raw: Vec<(usize, f64)> = self.lexical.score(query, k).into_iter().map(|h| (h.position, h.score)).collect();
            normalize_scores(&raw)
                .into_iter()
                .map(|(position, norm)| LexicalLeg {
                    position,
                    anchor_id: self.anchor_id(position).to_string(),
                    norm,
                })
                .collect()
        } else {
            Vec::new()
        };
        let mut degraded = false;
        let dense = if cfg.alpha < 1.0 {
            match self.dense.search(query, k, &self.tokenizer, self.provider.as_ref()) {
                Ok(hits) => {
                    let raw: Vec<(usize, f64)> = hits.iter().map(|h| (h.window_index, h.score)).collect();
                    normalize_scores(&raw)
                        .into_iter()
                        .zip(hits)
                        .map(|((_, norm), h)| DenseLeg {
                            window_id: h.window_id,
                            positions: h.positions,
                            anchor_ids: h.anchor_ids,
                            norm,
                        })
                        .collect()
                }
                Err(DenseError::EmptyQuery) => Vec::new(),
                Err(_) => {
                    degraded = true;
                    Vec::new()
                }
            }
        } else {
            Vec::new()
        };
        let candidates = fuse(&lexical, &dense, cfg, |p| self.record.anchors[p].char_range);
        let decision = decide(&candidates, cfg);
        Retrieval { candidates, decision, degraded }
    }

    fn retrieve_cell(&self, table_id: &str, row: u32, col: u32) -> Retrieval {
        let table = self
            .record
            .tables
            .keys()
            .find(|t| t.eq_ignore_ascii_case(table_id))
            .map(String::as_str)
            .unwrap_or(table_id);
        let Some(anchor) = self.record.cell(table, row, col) else {
            return Retrieval {
                candidates: Vec::new(),
                decision: RetrievalDecision::Abstain { reason: format!("no cell {table_id} r{row} c{col}") },
                degraded: false,
            };
        };
        let position = self.record.position(&anchor.anchor_id).expect("own anchor");
        let cand = Candidate {
            anchor_id: anchor.anchor_id.clone(),
            position,
            lexical_norm: 1.0,
            dense_norm: 1.0,
            fused: 1.0,
            source_window_id: None,
            snippet: anchor.char_range,
        };
        Retrieval {
            candidates: vec![cand.clone()],
            decision: RetrievalDecision::Answer { top: cand.clone(), highlight: vec![cand] },
            degraded: false,
        }
    }

    /// Target of an absolute temporal command.
    pub fn resolve_temporal(&self, slots: &TemporalSlots) -> Option<usize> {
        if let Some(n) = slots.paragraph {
            return self.resolve_paragraph(n, slots.section.as_deref());
        }
        if let Some(page) = slots.page {
            return self.resolve_page(page);
        }
        None
    }

    /// (section, ordinal) when a section is named, then the first paragraph
    /// printed with that number, then the n-th paragraph in reading order.
    pub fn resolve_paragraph(&self, n: u32, section: Option<&str>) -> Option<usize> {
        let anchors = &self.record.anchors;
        let paras = || anchors.iter().enumerate().filter(|(_, a)| a.kind == AnchorKind::Para);
        if let Some(section) = section {
            let wanted = section.trim().to_lowercase();
            let in_section = |path: &[String]| path.iter().any(|h| h.to_lowercase().contains(&wanted));
            return paras()
                .find(|(_, a)| a.ordinal == Some(n) && in_section(&a.section_path))
                .map(|(p, _)| p);
        }
        paras()
            .find(|(_, a)| a.ordinal == Some(n))
            .map(|(p, _)| p)
            .or_else(|| paras().nth((n as usize).checked_sub(1)?).map(|(p, _)| p))
    }

    /// First anchor starting on the page, else the first one touching it.
    pub fn resolve_page(&self, page: u32) -> Option<usize> {
        let anchors = &self.record.anchors;
        anchors
            .iter()
            .position(|a| a.page() == page)
            .or_else(|| anchors.iter().position(|a| a.pages().any(|p| p == page)))
    }

    /// Heading of the section before the one containing `from`.
    pub fn previous_section(&self, from: usize) -> Option<usize> {
        let anchors = &self.record.anchors;
        let from = from.min(anchors.len().checked_sub(1)?);
        let current = (0..=from).rev().find(|&p| anchors[p].kind == AnchorKind::Heading)?;
        (0..current).rev().find(|&p| anchors[p].kind == AnchorKind::Heading)
    }
}
