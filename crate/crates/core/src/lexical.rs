//! BM25 inverted index over anchors.
//!
//! Scoring per distinct query term `t` present in anchor `a`:
//!
//! ```text
//! idf(t)   = ln(1 + (N - df + 0.5) / (df + 0.5))
//! tf_part  = tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avglen))
//! score(a) = boost(type(a)) * sum_t idf(t) * tf_part(t, a)
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AnchorKind, DocumentRecord};
use crate::tokenize::Tokenizer;

pub const SIDECAR_FORMAT: &str = "anchornav-lexical";
pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LexicalError {
    #[error("document has no anchors")]
    EmptyDocument,
    #[error("sidecar: {0}")]
    Sidecar(String),
    #[error("unsupported sidecar version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeBoosts {
    pub heading: f64,
    pub table_cell: f64,
    pub para: f64,
}

impl Default for TypeBoosts {
    fn default() -> Self {
        Self { heading: 2.0, table_cell: 1.5, para: 1.0 }
    }
}

impl TypeBoosts {
    pub fn get(&self, kind: AnchorKind) -> f64 {
        match kind {
            AnchorKind::Heading => self.heading,
            AnchorKind::TableCell => self.table_cell,
            AnchorKind::Para => self.para,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub boosts: TypeBoosts,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75, boosts: TypeBoosts::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub position: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalIndex {
    pub params: Bm25Params,
    pub tokenizer: Tokenizer,
    pub anchor_ids: Vec<String>,
    pub kinds: Vec<AnchorKind>,
    pub doc_lens: Vec<u32>,
    pub avg_len: f64,
    pub postings: BTreeMap<String, Vec<Posting>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LexicalHit {
    pub position: usize,
    pub anchor_id: String,
    pub score: f64,
}

pub fn build_lexical(record: &DocumentRecord, params: Bm25Params) -> Result<LexicalIndex, LexicalError> {
    build_lexical_with(record, params, Tokenizer::default())
}

pub fn build_lexical_with(
    record: &DocumentRecord,
    params: Bm25Params,
    tokenizer: Tokenizer,
) -> Result<LexicalIndex, LexicalError> {
    if record.anchors.is_empty() {
        return Err(LexicalError::EmptyDocument);
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lens = Vec::with_capacity(record.anchors.len());
    for (pos, anchor) in record.anchors.iter().enumerate() {
        let terms = tokenizer.index_terms(record.text(anchor));
        doc_lens.push(terms.len() as u32);
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for t in terms {
            *counts.entry(t).or_default() += 1;
        }
        for (term, tf) in counts {
            postings.entry(term).or_default().push(Posting { position: pos as u32, tf });
        }
    }
    let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
    let avg_len = (total as f64 / doc_lens.len() as f64).max(f64::MIN_POSITIVE);
    Ok(LexicalIndex {
        params,
        tokenizer,
        anchor_ids: record.anchors.iter().map(|a| a.anchor_id.clone()).collect(),
        kinds: record.anchors.iter().map(|a| a.kind).collect(),
        doc_lens,
        avg_len,
        postings,
    })
}

impl LexicalIndex {
    pub fn len(&self) -> usize {
        self.anchor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_ids.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        let n = self.len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Distinct query terms in first-occurrence order.
    pub fn query_terms(&self, query: &str) -> Vec<String> {
        let mut seen = HashSet::new();
        self.tokenizer
            .index_terms(query)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }

    /// Ranked anchors with non-zero score; ties keep document order.
    pub fn score(&self, query: &str, top_k: usize) -> Vec<LexicalHit> {
        let terms = self.query_terms(query);
        self.score_terms(&terms, top_k)
    }

    pub fn score_terms(&self, terms: &[String], top_k: usize) -> Vec<LexicalHit> {
        if top_k == 0 {
            return Vec::new();
        }
        let Bm25Params { k1, b, boosts } = self.params;
        let mut acc = vec![0.0f64; self.len()];
        let mut touched = vec![false; self.len()];
        for term in terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(term);
            for p in list {
                let pos = p.position as usize;
                let tf = p.tf as f64;
                let norm = 1.0 - b + b * self.doc_lens[pos] as f64 / self.avg_len;
                acc[pos] += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
                touched[pos] = true;
            }
        }
        let mut hits: Vec<LexicalHit> = acc
            .into_iter()
            .enumerate()
            .filter(|&(pos, _)| touched[pos])
            .map(|(pos, s)| LexicalHit {
                position: pos,
                anchor_id: self.anchor_ids[pos].clone(),
                score: s * boosts.get(self.kinds[pos]),
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.position.cmp(&b.position)));
        hits.truncate(top_k);
        hits
    }

    pub fn to_sidecar_json(&self, doc_id: &str) -> String {
        let sidecar = SidecarRef {
            format: SIDECAR_FORMAT,
            version: SIDECAR_VERSION,
            doc_id,
            index: self,
        };
        serde_json::to_string(&sidecar).expect("index serializes")
    }

    pub fn from_sidecar_json(json: &str) -> Result<(String, LexicalIndex), LexicalError> {
        let header: SidecarHeader =
            serde_json::from_str(json).map_err(|e| LexicalError::Sidecar(e.to_string()))?;
        if header.format != SIDECAR_FORMAT {
            return Err(LexicalError::Sidecar(format!("unexpected format {:?}", header.format)));
        }
        if header.version != SIDECAR_VERSION {
            return Err(LexicalError::UnsupportedVersion(header.version));
        }
        let sidecar: SidecarOwned =
            serde_json::from_str(json).map_err(|e| LexicalError::Sidecar(e.to_string()))?;
        Ok((sidecar.doc_id, sidecar.index))
    }

    pub fn save(&self, doc_id: &str, path: &Path) -> Result<(), LexicalError> {
        std::fs::write(path, self.to_sidecar_json(doc_id))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(String, LexicalIndex), LexicalError> {
        Self::from_sidecar_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize)]
struct SidecarRef<'a> {
    format: &'a str,
    version: u32,
    doc_id: &'a str,
    index: &'a LexicalIndex,
}

#[derive(Deserialize)]
struct SidecarHeader {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct SidecarOwned {
    doc_id: String,
    index: LexicalIndex,
}
