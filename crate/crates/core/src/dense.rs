//! Late-interaction window index.
//!
//! Every window token gets its own unit vector; a query scores a window by
//! summing, over query tokens, the best cosine against any window token.
//! With a context-free provider (the built-in one) all windows share one
//! vocabulary matrix and store token ids only.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::ingest::Window;
use crate::tokenize::Tokenizer;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_SEED: u64 = 0x5eed_a11c_e0ff_1ce5;

/// Windows scored in parallel above this count.
const PARALLEL_THRESHOLD: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenseError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty token matrix")]
    EmptyMatrix,
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
}

/// Row-major token embeddings, one unit-norm row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub owner: String,
    pub tokens: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl TokenMatrix {
    /// Rows are L2-normalized on the way in; zero rows are rejected.
    pub fn from_rows(owner: impl Into<String>, tokens: Vec<String>, rows: Vec<Vec<f32>>) -> Result<Self, DenseError> {
        if rows.is_empty() || rows.len() != tokens.len() {
            return Err(DenseError::EmptyMatrix);
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(DenseError::EmptyMatrix);
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(DenseError::DimensionMismatch(dim, row.len()));
            }
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(DenseError::EmptyMatrix);
            }
            data.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        }
        Ok(Self { owner: owner.into(), tokens, dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn with_owner(mut self, owner: impl Into<String>) -> Self {
        self.owner = owner.into();
        self
    }

    /// Matrix built from a subset of rows, in the given order.
    pub fn select(&self, owner: impl Into<String>, rows: &[usize]) -> TokenMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        TokenMatrix {
            owner: owner.into(),
            tokens: rows.iter().map(|&r| self.tokens[r].clone()).collect(),
            dim: self.dim,
            data,
        }
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// `sum_i max_j cos(q_i, d_j)`.
pub fn score_maxsim(query: &TokenMatrix, window: &TokenMatrix) -> Result<f64, DenseError> {
    if query.is_empty() || window.is_empty() {
        return Err(DenseError::EmptyMatrix);
    }
    if query.dim != window.dim {
        return Err(DenseError::DimensionMismatch(query.dim, window.dim));
    }
    let mut total = 0.0;
    for i in 0..query.rows() {
        let q = query.row(i);
        let best = (0..window.rows())
            .map(|j| cosine(q, window.row(j)))
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, tokens: &[String]) -> Result<TokenMatrix, DenseError>;
    /// True when a token's vector does not depend on its neighbours.
    fn context_free(&self) -> bool {
        false
    }
}

/// Hashed character 3-grams (with `#` word boundaries). Each 3-gram adds a
/// seeded random sign to its bucket, so unrelated tokens have near-zero
/// cosine.
#[derive(Debug, Clone)]
pub struct HashedTrigramProvider {
    dim: usize,
    seed: u64,
}

impl HashedTrigramProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    pub fn embed_token(&self, token: &str) -> Vec<f32> {
        let padded: Vec<char> = std::iter::once('#')
            .chain(token.chars())
            .chain(std::iter::once('#'))
            .collect();
        let mut counts = vec![0.0f32; self.dim];
        let mut add = |bytes: &[u8]| {
            let h = seeded_hash(self.seed, bytes);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            counts[(h % self.dim as u64) as usize] += sign;
        };
        let mut gram = String::new();
        for w in padded.windows(3) {
            gram.clear();
            gram.extend(w);
            add(gram.as_bytes());
        }
        if padded.len() < 3 {
            add(token.as_bytes());
        }
        if counts.iter().all(|&c| c == 0.0) {
            counts[(seeded_hash(self.seed, token.as_bytes()) % self.dim as u64) as usize] = 1.0;
        }
        counts
    }
}

impl Default for HashedTrigramProvider {
    fn default() -> Self {
        Self::new(DEFAULT_DIM, DEFAULT_SEED)
    }
}

impl EmbeddingProvider for HashedTrigramProvider {
    fn name(&self) -> &str {
        "hashed-trigram"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Result<TokenMatrix, DenseError> {
        let rows = tokens.iter().map(|t| self.embed_token(t)).collect();
        TokenMatrix::from_rows("query", tokens.to_vec(), rows)
    }

    fn context_free(&self) -> bool {
        true
    }
}

/// FNV-1a over the bytes, seeded and finalized with splitmix64.
fn seeded_hash(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

// ---------------------------------------------------------------------------
// Index
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Storage {
    /// One vocabulary matrix; windows hold distinct token ids.
    Shared { vocab: TokenMatrix, windows: Vec<Vec<u32>> },
    PerWindow(Vec<Option<TokenMatrix>>),
}

#[derive(Debug, Clone)]
pub struct DenseIndex {
    pub window_ids: Vec<String>,
    pub window_positions: Vec<Vec<usize>>,
    pub window_anchor_ids: Vec<Vec<String>>,
    pub provider_name: String,
    dim: usize,
    storage: Storage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseHit {
    pub window_index: usize,
    pub window_id: String,
    pub score: f64,
    pub anchor_ids: Vec<String>,
    pub positions: Vec<usize>,
}

pub fn dense_tokens(tokenizer: &Tokenizer, text: &str) -> Vec<String> {
    tokenizer.words(text)
}

impl DenseIndex {
    pub fn build(
        windows: &[Window],
        tokenizer: &Tokenizer,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, DenseError> {
        let token_lists: Vec<Vec<String>> = windows.iter().map(|w| dense_tokens(tokenizer, &w.text)).collect();
        let storage = if provider.context_free() {
            let mut ids: HashMap<&str, u32> = HashMap::new();
            let mut vocab: Vec<String> = Vec::new();
            let mut lists = Vec::with_capacity(token_lists.len());
            for tokens in &token_lists {
                let mut list: Vec<u32> = tokens
                    .iter()
                    .map(|t| {
                        *ids.entry(t.as_str()).or_insert_with(|| {
                            vocab.push(t.clone());
                            (vocab.len() - 1) as u32
                        })
                    })
                    .collect();
                list.sort_unstable();
                list.dedup();
                lists.push(list);
            }
            let vocab = if vocab.is_empty() {
                None
            } else {
                Some(provider.embed(&vocab)?.with_owner("vocab"))
            };
            match vocab {
                Some(vocab) => Storage::Shared { vocab, windows: lists },
                None => Storage::PerWindow(Vec::new()),
            }
        } else {
            let mut mats = Vec::with_capacity(windows.len());
            for (w, tokens) in windows.iter().zip(&token_lists) {
                if tokens.is_empty() {
                    mats.push(None);
                    continue;
                }
                let m = provider.embed(tokens)?;
                if m.dim() != provider.dim() {
                    return Err(DenseError::DimensionMismatch(provider.dim(), m.dim()));
                }
                mats.push(Some(m.with_owner(w.window_id.clone())));
            }
            Storage::PerWindow(mats)
        };
        Ok(Self {
            window_ids: windows.iter().map(|w| w.window_id.clone()).collect(),
            window_positions: windows.iter().map(|w| w.positions.clone()).collect(),
            window_anchor_ids: windows.iter().map(|w| w.anchor_ids.clone()).collect(),
            provider_name: provider.name().to_string(),
            dim: provider.dim(),
            storage,
        })
    }

    pub fn len(&self) -> usize {
        self.window_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Materialized token matrix of one window.
    pub fn window_matrix(&self, w: usize) -> Option<TokenMatrix> {
        match &self.storage {
            Storage::Shared { vocab, windows } => {
                let rows: Vec<usize> = windows.get(w)?.iter().map(|&i| i as usize).collect();
                (!rows.is_empty()).then(|| vocab.select(self.window_ids[w].clone(), &rows))
            }
            Storage::PerWindow(mats) => mats.get(w).cloned().flatten(),
        }
    }

    /// MaxSim of an embedded query against every window, in window order.
    /// Windows without tokens score `None`.
    pub fn score_all(&self, query: &TokenMatrix) -> Result<Vec<Option<f64>>, DenseError> {
        if query.is_empty() {
            return Err(DenseError::EmptyQuery);
        }
        if query.dim() != self.dim {
            return Err(DenseError::DimensionMismatch(query.dim(), self.dim));
        }
        match &self.storage {
            Storage::Shared { vocab, windows } => {
                let m = query.rows();
                let v = vocab.rows();
                // sims[i * v + t] = cos(q_i, vocab_t)
                let sims: Vec<f64> = (0..m)
                    .flat_map(|i| (0..v).map(move |t| (i, t)))
                    .map(|(i, t)| cosine(query.row(i), vocab.row(t)))
                    .collect();
                let score = |ids: &Vec<u32>| -> Option<f64> {
                    if ids.is_empty() {
                        return None;
                    }
                    let mut total = 0.0;
                    for i in 0..m {
                        let row = &sims[i * v..(i + 1) * v];
                        total += ids.iter().map(|&t| row[t as usize]).fold(f64::NEG_INFINITY, f64::max);
                    }
                    Some(total)
                };
                Ok(if windows.len() >= PARALLEL_THRESHOLD {
                    windows.par_iter().map(score).collect()
                } else {
                    windows.iter().map(score).collect()
                })
            }
            Storage::PerWindow(mats) => {
                let score = |w: &Option<TokenMatrix>| w.as_ref().and_then(|w| score_maxsim(query, w).ok());
                Ok(if mats.len() >= PARALLEL_THRESHOLD {
                    mats.par_iter().map(score).collect()
                } else {
                    mats.iter().map(score).collect()
                })
            }
        }
    }

    /// Exhaustive ranking of windows by MaxSim; ties keep window order.
    pub fn search(
        &self,
        query: &str,
        top_k: usize,
        tokenizer: &Tokenizer,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<DenseHit>, DenseError> {
        let tokens = dense_tokens(tokenizer, query);
        if tokens.is_empty() {
            return Err(DenseError::EmptyQuery);
        }
        let q = provider.embed(&tokens)?;
        self.search_embedded(&q, top_k)
    }

    pub fn search_embedded(&self, query: &TokenMatrix, top_k: usize) -> Result<Vec<DenseHit>, DenseError> {
        let scores = self.score_all(query)?;
        let mut ranked: Vec<(usize, f64)> = scores
            .into_iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|s| (i, s)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        Ok(ranked
            .into_iter()
            .map(|(i, score)| DenseHit {
                window_index: i,
                window_id: self.window_ids[i].clone(),
                score,
                anchor_ids: self.window_anchor_ids[i].clone(),
                positions: self.window_positions[i].clone(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn builtin_is_deterministic_and_unit_norm() {
        let p = HashedTrigramProvider::default();
        let a = p.embed(&toks(&["call"])).unwrap();
        let b = p.embed(&toks(&["call"])).unwrap();
        assert_eq!(a, b);
        for t in ["call", "a", "", "section_302", "अदालत"] {
            let m = p.embed(&toks(&[t])).unwrap();
            let n: f64 = m.row(0).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6, "{t}: {n}");
        }
    }

    #[test]
    fn shared_trigrams_give_partial_similarity() {
        let p = HashedTrigramProvider::default();
        let a = p.embed(&toks(&["call"])).unwrap();
        let b = p.embed(&toks(&["cal1"])).unwrap();
        let sim = cosine(a.row(0), b.row(0));
        assert!(sim > 0.0 && sim < 1.0, "{sim}");
    }

    #[test]
    fn identical_matrices_score_row_count() {
        let p = HashedTrigramProvider::default();
        let q = p.embed(&toks(&["witness", "deposed", "before", "court"])).unwrap();
        let s = score_maxsim(&q, &q).unwrap();
        assert!((s - 4.0).abs() < 1e-6);
    }

    #[test]
    fn exact_unit_rows_score_exactly() {
        let e = |i: usize| {
            let mut v = vec![0.0f32; 4];
            v[i] = 1.0;
            v
        };
        let q = TokenMatrix::from_rows("q", toks(&["a", "b", "c", "d"]), (0..4).map(e).collect()).unwrap();
        assert_eq!(score_maxsim(&q, &q).unwrap(), 4.0);
        let q2 = TokenMatrix::from_rows("q", toks(&["a", "b"]), vec![e(0), e(1)]).unwrap();
        let d = TokenMatrix::from_rows("d", toks(&["c", "d"]), vec![e(2), e(3)]).unwrap();
        assert_eq!(score_maxsim(&q2, &d).unwrap(), 0.0);
    }

    #[test]
    fn maxsim_errors() {
        let a = TokenMatrix::from_rows("a", toks(&["x"]), vec![vec![1.0, 0.0]]).unwrap();
        let b = TokenMatrix::from_rows("b", toks(&["x"]), vec![vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(score_maxsim(&a, &b), Err(DenseError::DimensionMismatch(2, 3)));
        assert_eq!(TokenMatrix::from_rows("z", toks(&["x"]), vec![vec![0.0, 0.0]]), Err(DenseError::EmptyMatrix));
        assert_eq!(TokenMatrix::from_rows("z", vec![], vec![]), Err(DenseError::EmptyMatrix));
    }
}
