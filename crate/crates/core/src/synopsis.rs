//! Extractive synopses built from BM25 term centrality.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align_fuzzy, AlignMethod};
use crate::ingest::{AnchorKind, DocumentRecord};
use crate::lexical::LexicalIndex;
use crate::text::sentence_prefix_len;

pub const DEFAULT_LINES: usize = 5;
pub const TOP_TERMS: usize = 8;
pub const EXCERPT_SENTENCES: usize = 2;

const DEFAULT_SCOPES_TOML: &str = include_str!("../config/scopes.toml");

#[derive(Debug, Error)]
pub enum SynopsisError {
    #[error("document has no anchors")]
    EmptyDocument,
    #[error("unknown scope {0:?}")]
    UnknownScope(String),
    #[error("scope config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeSpec {
    #[serde(default)]
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeConfig {
    pub scopes: BTreeMap<String, ScopeSpec>,
}

impl Default for ScopeConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_SCOPES_TOML).expect("bundled scope config parses")
    }
}

impl ScopeConfig {
    pub fn from_toml(src: &str) -> Result<Self, SynopsisError> {
        let cfg: ScopeConfig = toml::from_str(src).map_err(|e| SynopsisError::Config(e.to_string()))?;
        if cfg.scopes.is_empty() {
            return Err(SynopsisError::Config("no scopes defined".into()));
        }
        Ok(cfg)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.scopes.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynopsisLine {
    pub text: String,
    pub anchor_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synopsis {
    pub scope: String,
    pub lines: Vec<SynopsisLine>,
    /// Unix milliseconds supplied by the caller.
    pub built_at: u64,
}

impl Synopsis {
    pub fn cited_anchor_ids(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for id in self.lines.iter().flat_map(|l| &l.anchor_ids) {
            if !seen.contains(&id.as_str()) {
                seen.push(id.as_str());
            }
        }
        seen
    }
}

/// Stand-in seam for a generator other than the extractive one.
pub trait SynopsisGenerator: Send + Sync {
    fn generate(
        &self,
        record: &DocumentRecord,
        lexical: &LexicalIndex,
        scope: &str,
        built_at: u64,
    ) -> Result<Synopsis, SynopsisError>;
}

#[derive(Debug, Clone, Default)]
pub struct ExtractiveGenerator {
    pub scopes: ScopeConfig,
    pub lines: Option<usize>,
}

impl SynopsisGenerator for ExtractiveGenerator {
    fn generate(
        &self,
        record: &DocumentRecord,
        lexical: &LexicalIndex,
        scope: &str,
        built_at: u64,
    ) -> Result<Synopsis, SynopsisError> {
        let centrality = Centrality::compute(record, lexical)?;
        build_with_centrality(
            record,
            &centrality,
            &self.scopes,
            scope,
            self.lines.unwrap_or(DEFAULT_LINES),
            built_at,
        )
    }
}

/// Per-anchor centrality: the BM25 mass that the anchor's own top terms
/// collect from every other anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Centrality {
    pub scores: Vec<f64>,
}

impl Centrality {
    pub fn compute(record: &DocumentRecord, lexical: &LexicalIndex) -> Result<Self, SynopsisError> {
        if record.anchors.is_empty() {
            return Err(SynopsisError::EmptyDocument);
        }
        let scores = (0..record.anchors.len())
            .map(|pos| {
                let terms = top_terms(lexical, record.text_at(pos), TOP_TERMS);
                lexical
                    .score_terms(&terms, usize::MAX)
                    .iter()
                    .filter(|h| h.position != pos)
                    .map(|h| h.score)
                    .sum()
            })
            .collect();
        Ok(Self { scores })
    }
}

/// Highest tf-idf terms of a text; ties by term order.
pub fn top_terms(lexical: &LexicalIndex, text: &str, n: usize) -> Vec<String> {
    let mut tf: HashMap<String, u32> = HashMap::new();
    for t in lexical.tokenizer.index_terms(text) {
        *tf.entry(t).or_default() += 1;
    }
    let mut weighted: Vec<(String, f64)> = tf
        .into_iter()
        .map(|(t, f)| {
            let w = f as f64 * lexical.idf(&t);
            (t, w)
        })
        .collect();
    weighted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    weighted.into_iter().take(n).map(|(t, _)| t).collect()
}

pub fn build_synopsis(
    record: &DocumentRecord,
    lexical: &LexicalIndex,
    scopes: &ScopeConfig,
    scope: &str,
    k: usize,
    built_at: u64,
) -> Result<Synopsis, SynopsisError> {
    let centrality = Centrality::compute(record, lexical)?;
    build_with_centrality(record, &centrality, scopes, scope, k, built_at)
}

pub fn build_with_centrality(
    record: &DocumentRecord,
    centrality: &Centrality,
    scopes: &ScopeConfig,
    scope: &str,
    k: usize,
    built_at: u64,
) -> Result<Synopsis, SynopsisError> {
    if record.anchors.is_empty() {
        return Err(SynopsisError::EmptyDocument);
    }
    let spec = scopes
        .scopes
        .get(scope)
        .ok_or_else(|| SynopsisError::UnknownScope(scope.to_string()))?;
    let pool = scope_pool(record, spec);
    let rank = |mut positions: Vec<usize>| {
        positions.sort_by(|&a, &b| centrality.scores[b].total_cmp(&centrality.scores[a]).then(a.cmp(&b)));
        positions
    };

    let mut chosen: Vec<usize> = rank(pool).into_iter().take(k.max(1)).collect();
    let needed = 2.min(record.anchors.len());
    if chosen.len() < needed {
        let rest: Vec<usize> = (0..record.anchors.len()).filter(|p| !chosen.contains(p)).collect();
        let extra = needed - chosen.len();
        chosen.extend(rank(rest).into_iter().take(extra));
    }
    chosen.sort_unstable();

    let lines = chosen.into_iter().map(|pos| line_for(record, pos)).collect();
    Ok(Synopsis { scope: scope.to_string(), lines, built_at })
}

fn scope_pool(record: &DocumentRecord, spec: &ScopeSpec) -> Vec<usize> {
    let paras: Vec<usize> = positions_of(record, |k| k == AnchorKind::Para);
    let base = if !paras.is_empty() {
        paras
    } else {
        let text = positions_of(record, |k| k != AnchorKind::TableCell);
        if text.is_empty() {
            (0..record.anchors.len()).collect()
        } else {
            text
        }
    };
    if spec.keywords.is_empty() {
        return base;
    }
    let keywords: Vec<String> = spec.keywords.iter().map(|k| k.to_lowercase()).collect();
    let by_section: Vec<usize> = base
        .iter()
        .copied()
        .filter(|&p| {
            record.anchors[p]
                .section_path
                .iter()
                .any(|h| keywords.iter().any(|k| h.to_lowercase().contains(k)))
        })
        .collect();
    if !by_section.is_empty() {
        return by_section;
    }
    let by_text: Vec<usize> = base
        .iter()
        .copied()
        .filter(|&p| {
            record
                .text_at(p)
                .to_lowercase()
                .split(|c: char| !c.is_alphanumeric())
                .any(|w| keywords.iter().any(|k| w.starts_with(k.as_str())))
        })
        .collect();
    if by_text.is_empty() {
        base
    } else {
        by_text
    }
}

fn positions_of(record: &DocumentRecord, keep: impl Fn(AnchorKind) -> bool) -> Vec<usize> {
    record
        .anchors
        .iter()
        .enumerate()
        .filter(|(_, a)| keep(a.kind))
        .map(|(p, _)| p)
        .collect()
}

fn line_for(record: &DocumentRecord, pos: usize) -> SynopsisLine {
    let text = record.text_at(pos);
    let excerpt = text[..sentence_prefix_len(text, EXCERPT_SENTENCES)].trim_end().to_string();
    let own = record.anchors[pos].anchor_id.clone();
    let mut anchor_ids = vec![own.clone()];
    // The same excerpt may occur verbatim earlier; cite where alignment lands too.
    if let Ok(hit) = align_fuzzy(record, &excerpt, 0.0) {
        if hit.method == AlignMethod::Exact && hit.anchor_id != own {
            anchor_ids.push(hit.anchor_id);
        }
    }
    SynopsisLine { text: excerpt, anchor_ids }
}
