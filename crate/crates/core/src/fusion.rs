//! Score normalization, weighted fusion and the answer/disambiguate/abstain decision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::CharRange;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Weight of the lexical leg.
    pub alpha: f64,
    pub top_k: usize,
    /// Abstain below this fused score.
    pub tau: f64,
    /// Disambiguate when the runner-up is within this margin.
    pub delta: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { alpha: 0.7, top_k: 20, tau: 0.35, delta: 0.05 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(format!("tau {} outside [0, 1]", self.tau));
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(format!("delta {} must be >= 0", self.delta));
        }
        if self.top_k == 0 {
            return Err("top_k must be >= 1".into());
        }
        Ok(())
    }
}

/// Per-request overrides, applied field by field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionOverrides {
    pub alpha: Option<f64>,
    pub top_k: Option<usize>,
    pub tau: Option<f64>,
    pub delta: Option<f64>,
}

impl FusionConfig {
    pub fn with_overrides(mut self, o: &FusionOverrides) -> Self {
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = o.top_k {
            self.top_k = v;
        }
        if let Some(v) = o.tau {
            self.tau = v;
        }
        if let Some(v) = o.delta {
            self.delta = v;
        }
        self
    }
}

/// Min-max normalization; a singleton or constant list maps to 1.0.
pub fn normalize_scores<K: Clone>(raw: &[(K, f64)]) -> Vec<(K, f64)> {
    let Some(max) = raw.iter().map(|(_, s)| *s).reduce(f64::max) else {
        return Vec::new();
    };
    let min = raw.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    let span = max - min;
    raw.iter()
        .map(|(k, s)| {
            let n = if span > 0.0 { (s - min) / span } else { 1.0 };
            (k.clone(), n)
        })
        .collect()
}

/// One entry of the normalized lexical leg.
#[derive(Debug, Clone, PartialEq)]
pub struct LexicalLeg {
    pub position: usize,
    pub anchor_id: String,
    pub norm: f64,
}

/// One entry of the normalized dense leg: a window and the anchors it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLeg {
    pub window_id: String,
    pub positions: Vec<usize>,
    pub anchor_ids: Vec<String>,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub anchor_id: String,
    /// Reading-order position of the anchor.
    pub position: usize,
    pub lexical_norm: f64,
    pub dense_norm: f64,
    pub fused: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_window_id: Option<String>,
    pub snippet: CharRange,
}

pub fn fused_score(alpha: f64, keyword: f64, vector: f64) -> f64 {
    alpha * keyword + (1.0 - alpha) * vector
}

/// Union both legs per anchor; dense window scores propagate to every covered
/// anchor by max. A missing leg contributes 0.
pub fn fuse(
    lexical: &[LexicalLeg],
    dense: &[DenseLeg],
    cfg: &FusionConfig,
    snippet: impl Fn(usize) -> CharRange,
) -> Vec<Candidate> {
    struct Acc {
        anchor_id: String,
        lexical: f64,
        dense: f64,
        window: Option<String>,
    }
    let mut by_pos: BTreeMap<usize, Acc> = BTreeMap::new();
    for l in lexical {
        let e = by_pos.entry(l.position).or_insert_with(|| Acc {
            anchor_id: l.anchor_id.clone(),
            lexical: 0.0,
            dense: 0.0,
            window: None,
        });
        e.lexical = e.lexical.max(l.norm);
    }
    for d in dense {
        for (pos, id) in d.positions.iter().zip(&d.anchor_ids) {
            let e = by_pos.entry(*pos).or_insert_with(|| Acc {
                anchor_id: id.clone(),
                lexical: 0.0,
                dense: 0.0,
                window: None,
            });
            if e.window.is_none() || d.norm > e.dense {
                e.dense = d.norm;
                e.window = Some(d.window_id.clone());
            }
        }
    }
    let mut out: Vec<Candidate> = by_pos
        .into_iter()
        .map(|(pos, a)| Candidate {
            fused: fused_score(cfg.alpha, a.lexical, a.dense),
            anchor_id: a.anchor_id,
            position: pos,
            lexical_norm: a.lexical,
            dense_norm: a.dense,
            source_window_id: a.window,
            snippet: snippet(pos),
        })
        .collect();
    sort_candidates(&mut out);
    out
}

pub fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| b.fused.total_cmp(&a.fused).then(a.position.cmp(&b.position)));
}

/// Optional second-stage ordering over the fused short list.
pub trait Reranker: Send + Sync {
    fn rerank(&self, query: &str, candidates: Vec<Candidate>) -> Vec<Candidate>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityReranker;

impl Reranker for IdentityReranker {
    fn rerank(&self, _query: &str, candidates: Vec<Candidate>) -> Vec<Candidate> {
        candidates
    }
}

pub const MAX_DISAMBIGUATION: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum RetrievalDecision {
    Answer { top: Candidate, highlight: Vec<Candidate> },
    Disambiguate { options: Vec<Candidate>, highlight: Vec<Candidate> },
    Abstain { reason: String },
}

impl RetrievalDecision {
    pub fn kind(&self) -> &'static str {
        match self {
            RetrievalDecision::Answer { .. } => "answer",
            RetrievalDecision::Disambiguate { .. } => "disambiguate",
            RetrievalDecision::Abstain { .. } => "abstain",
        }
    }

    /// Anchors counted as the prediction: every candidate at or above tau.
    pub fn highlight_ids(&self) -> Vec<&str> {
        match self {
            RetrievalDecision::Answer { highlight, .. } | RetrievalDecision::Disambiguate { highlight, .. } => {
                highlight.iter().map(|c| c.anchor_id.as_str()).collect()
            }
            RetrievalDecision::Abstain { .. } => Vec::new(),
        }
    }
}

/// `candidates` must be sorted by fused score, best first.
pub fn decide(candidates: &[Candidate], cfg: &FusionConfig) -> RetrievalDecision {
    let Some(top) = candidates.first() else {
        return RetrievalDecision::Abstain { reason: "no evidence".into() };
    };
    if top.fused < cfg.tau {
        return RetrievalDecision::Abstain {
            reason: format!("best candidate {:.3} below threshold {:.3}", top.fused, cfg.tau),
        };
    }
    let highlight: Vec<Candidate> = candidates.iter().filter(|c| c.fused >= cfg.tau).cloned().collect();
    match candidates.get(1) {
        Some(second) if top.fused - second.fused <= cfg.delta => RetrievalDecision::Disambiguate {
            options: candidates.iter().take(MAX_DISAMBIGUATION).cloned().collect(),
            highlight,
        },
        _ => RetrievalDecision::Answer { top: top.clone(), highlight },
    }
}
