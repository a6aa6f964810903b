//! Strict-hit evaluation over a JSONL query corpus.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::EmbeddingProvider;
use crate::engine::{builtin_provider, DocumentIndex, EngineConfig, EngineError};
use crate::fusion::FusionConfig;
use crate::ingest::{DocumentRecord, WindowConfig};
use crate::router::{IntentKind, Router};
use crate::synopsis::ScopeConfig;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold set is empty but the prediction is not")]
    EmptyGold,
    #[error("unknown document {0:?}")]
    MissingDocument(String),
    #[error("malformed case at line {line}: {reason}")]
    MalformedCase { line: usize, reason: String },
    #[error("unknown mode {0:?}")]
    UnknownMode(String),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn strict_f1<S: AsRef<str>, T: AsRef<str>>(predicted: &[S], gold: &[T]) -> Result<Prf, EvalError> {
    let pred: BTreeSet<&str> = predicted.iter().map(AsRef::as_ref).collect();
    let gold: BTreeSet<&str> = gold.iter().map(AsRef::as_ref).collect();
    if gold.is_empty() {
        if pred.is_empty() {
            return Ok(Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        }
        return Err(EvalError::EmptyGold);
    }
    let hit = pred.intersection(&gold).count() as f64;
    let precision = if pred.is_empty() { 0.0 } else { hit / pred.len() as f64 };
    let recall = hit / gold.len() as f64;
    Ok(Prf { precision, recall, f1: harmonic(precision, recall) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Temporal,
    Contextual,
    Summarization,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Temporal, Family::Contextual, Family::Summarization];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Temporal => "temporal",
            Family::Contextual => "contextual",
            Family::Summarization => "summarization",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryCase {
    pub query_id: String,
    pub doc_id: String,
    pub family: Family,
    pub utterance: String,
    pub gold_anchor_ids: Vec<String>,
}

pub fn parse_corpus(jsonl: &str) -> Result<Vec<QueryCase>, EvalError> {
    let mut cases = Vec::new();
    for (i, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case: QueryCase = serde_json::from_str(line)
            .map_err(|e| EvalError::MalformedCase { line: i + 1, reason: e.to_string() })?;
        if case.gold_anchor_ids.is_empty() {
            return Err(EvalError::MalformedCase { line: i + 1, reason: "empty gold_anchor_ids".into() });
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Every case refers to a known document and existing gold anchors.
pub fn validate_corpus(cases: &[QueryCase], docs: &BTreeMap<String, DocumentRecord>) -> Result<(), EvalError> {
    for (i, c) in cases.iter().enumerate() {
        let doc = docs.get(&c.doc_id).ok_or_else(|| EvalError::MissingDocument(c.doc_id.clone()))?;
        if let Some(bad) = c.gold_anchor_ids.iter().find(|g| !doc.contains_anchor(g)) {
            return Err(EvalError::MalformedCase {
                line: i + 1,
                reason: format!("{}: gold anchor {bad} not in {}", c.query_id, c.doc_id),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    KeywordOnly,
    DenseOnly,
    Hybrid,
    LateWindowKeyword,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::KeywordOnly, Mode::DenseOnly, Mode::Hybrid, Mode::LateWindowKeyword];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::KeywordOnly => "keyword_only",
            Mode::DenseOnly => "dense_only",
            Mode::Hybrid => "hybrid",
            Mode::LateWindowKeyword => "late_window_keyword",
        }
    }

    pub fn alpha(self, hybrid_alpha: f64) -> f64 {
        match self {
            Mode::KeywordOnly => 1.0,
            Mode::DenseOnly => 0.0,
            Mode::Hybrid | Mode::LateWindowKeyword => hybrid_alpha,
        }
    }

    pub fn window_width(self, late_width: usize) -> usize {
        match self {
            Mode::LateWindowKeyword => late_width,
            _ => 1,
        }
    }

    /// Strict F1 reported for the corresponding setting on a private corpus
    /// with neural encoders. Context for readers, never a target.
    pub fn reference_f1(self) -> &'static [f64] {
        match self {
            Mode::KeywordOnly => &[0.70],
            Mode::DenseOnly => &[0.43, 0.55],
            Mode::Hybrid => &[0.85],
            Mode::LateWindowKeyword => &[0.92],
        }
    }

    /// `all` or a comma-separated list of mode names.
    pub fn parse_list(s: &str) -> Result<Vec<Mode>, EvalError> {
        if s.trim() == "all" {
            return Ok(Mode::ALL.to_vec());
        }
        s.split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(|m| {
                Mode::ALL
                    .into_iter()
                    .find(|x| x.as_str() == m)
                    .ok_or_else(|| EvalError::UnknownMode(m.to_string()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub family: Family,
    pub intent: String,
    pub predicted: Vec<String>,
    pub prf: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    /// Sample standard deviation; nearest-rank p95.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Some(Self { n, mean_ms: mean, sd_ms: var.sqrt(), p95_ms: sorted[rank - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub alpha: f64,
    pub window_width: usize,
    pub queries: usize,
    /// Macro-averaged over queries.
    pub precision: f64,
    pub recall: f64,
    /// Harmonic mean of the macro precision and recall.
    pub strict_f1: f64,
    pub mean_query_f1: f64,
    pub reference_f1: Vec<f64>,
    pub latency: BTreeMap<Family, LatencyStats>,
    pub outcomes: Vec<QueryOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub modes: Vec<ModeReport>,
}

impl EvalReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>5} {:>3} {:>7} {:>9} {:>7} {:>9} {:>10}",
            "mode", "alpha", "W", "queries", "precision", "recall", "strict_f1", "reference"
        );
        for m in &self.modes {
            let refs: Vec<String> = m.reference_f1.iter().map(|v| format!("{v:.2}")).collect();
            let _ = writeln!(
                out,
                "{:<20} {:>5.2} {:>3} {:>7} {:>9.4} {:>7.4} {:>9.4} {:>10}",
                m.mode.as_str(),
                m.alpha,
                m.window_width,
                m.queries,
                m.precision,
                m.recall,
                m.strict_f1,
                refs.join("/")
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<20} {:<14} {:>5} {:>9} {:>9} {:>9}", "mode", "family", "n", "mean_ms", "sd_ms", "p95_ms");
        for m in &self.modes {
            for (family, s) in &m.latency {
                let _ = writeln!(
                    out,
                    "{:<20} {:<14} {:>5} {:>9.3} {:>9.3} {:>9.3}",
                    m.mode.as_str(),
                    family.as_str(),
                    s.n,
                    s.mean_ms,
                    s.sd_ms,
                    s.p95_ms
                );
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "reference: published strict F1 on a private corpus with neural encoders; not comparable.");
        out
    }
}

/// Anchor set a routed utterance predicts against one document.
pub fn predict(index: &DocumentIndex, router: &Router, utterance: &str, fusion: &FusionConfig) -> (String, Vec<String>) {
    let intent = router.route(utterance);
    let name = intent.kind.name().to_string();
    let predicted = match &intent.kind {
        IntentKind::Temporal(slots) => index
            .resolve_temporal(slots)
            .map(|p| vec![index.anchor_id(p).to_string()])
            .unwrap_or_default(),
        IntentKind::Contextual(c) => index
            .retrieve(&c.query_text, &c.filters, fusion)
            .decision
            .highlight_ids()
            .into_iter()
            .map(str::to_string)
            .collect(),
        IntentKind::Summarization(s) => index
            .synopsis(&s.scope)
            .map(|syn| syn.cited_anchor_ids().into_iter().map(str::to_string).collect())
            .unwrap_or_default(),
        IntentKind::ViewerControl(_) => Vec::new(),
    };
    (name, predicted)
}

pub struct Evaluator {
    pub docs: BTreeMap<String, DocumentRecord>,
    pub cfg: EngineConfig,
    pub router: Router,
    pub provider: Arc<dyn EmbeddingProvider>,
    pub scopes: ScopeConfig,
    pub parallel: bool,
}

impl Evaluator {
    pub fn new(docs: impl IntoIterator<Item = DocumentRecord>, cfg: EngineConfig) -> Self {
        Self {
            docs: docs.into_iter().map(|d| (d.doc_id.clone(), d)).collect(),
            cfg,
            router: Router::stub(),
            provider: builtin_provider(),
            scopes: ScopeConfig::default(),
            parallel: false,
        }
    }

    fn build_indexes(&self, width: usize) -> Result<HashMap<String, DocumentIndex>, EvalError> {
        let mut cfg = self.cfg.clone();
        cfg.window = WindowConfig { width, stride: self.cfg.window.stride.min(width) };
        self.docs
            .iter()
            .map(|(id, d)| {
                let ix = DocumentIndex::build(d.clone(), &cfg, self.provider.clone(), &self.scopes, 0)?;
                Ok((id.clone(), ix))
            })
            .collect()
    }

    pub fn run(&self, cases: &[QueryCase], modes: &[Mode]) -> Result<EvalReport, EvalError> {
        validate_corpus(cases, &self.docs)?;
        let mut by_width: BTreeMap<usize, HashMap<String, DocumentIndex>> = BTreeMap::new();
        let mut reports = Vec::with_capacity(modes.len());
        for &mode in modes {
            let width = mode.window_width(self.cfg.window.width);
            if let std::collections::btree_map::Entry::Vacant(e) = by_width.entry(width) {
                e.insert(self.build_indexes(width)?);
            }
            let indexes = &by_width[&width];
            let fusion = FusionConfig { alpha: mode.alpha(self.cfg.fusion.alpha), ..self.cfg.fusion };
            let run_one = |c: &QueryCase| -> Result<(QueryOutcome, f64), EvalError> {
                let index = &indexes[&c.doc_id];
                let t0 = Instant::now();
                let (intent, predicted) = predict(index, &self.router, &c.utterance, &fusion);
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                let prf = strict_f1(&predicted, &c.gold_anchor_ids)?;
                Ok((QueryOutcome { query_id: c.query_id.clone(), family: c.family, intent, predicted, prf }, ms))
            };
            let results: Vec<(QueryOutcome, f64)> = if self.parallel {
                cases.par_iter().map(run_one).collect::<Result<_, _>>()?
            } else {
                cases.iter().map(run_one).collect::<Result<_, _>>()?
            };
            reports.push(summarize(mode, fusion.alpha, width, results));
        }
        Ok(EvalReport { modes: reports })
    }
}

fn summarize(mode: Mode, alpha: f64, width: usize, results: Vec<(QueryOutcome, f64)>) -> ModeReport {
    let n = results.len();
    let mean = |f: &dyn Fn(&Prf) -> f64| {
        if n == 0 {
            0.0
        } else {
            results.iter().map(|(o, _)| f(&o.prf)).sum::<f64>() / n as f64
        }
    };
    let precision = mean(&|p| p.precision);
    let recall = mean(&|p| p.recall);
    let mean_query_f1 = mean(&|p| p.f1);
    let mut samples: BTreeMap<Family, Vec<f64>> = BTreeMap::new();
    for (o, ms) in &results {
        samples.entry(o.family).or_default().push(*ms);
    }
    let latency = samples
        .into_iter()
        .filter_map(|(f, s)| LatencyStats::from_samples(&s).map(|st| (f, st)))
        .collect();
    ModeReport {
        mode,
        alpha,
        window_width: width,
        queries: n,
        precision,
        recall,
        strict_f1: harmonic(precision, recall),
        mean_query_f1,
        reference_f1: mode.reference_f1().to_vec(),
        latency,
        outcomes: results.into_iter().map(|(o, _)| o).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_layout, AnchorKind, BBoxCoords, LayoutPayload, LayoutSpan};
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn strict_f1_examples() {
        let p = strict_f1(&["a1"], &["a1"]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = strict_f1(&["a1", "a2"], &["a1"]).unwrap();
        assert!(close(p.precision, 0.5) && close(p.recall, 1.0) && close(p.f1, 2.0 / 3.0));
        let p = strict_f1::<&str, _>(&[], &["a1"]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        let p = strict_f1::<&str, &str>(&[], &[]).unwrap();
        assert_eq!(p.f1, 1.0);
        assert!(matches!(strict_f1::<_, &str>(&["a1"], &[]), Err(EvalError::EmptyGold)));
    }

    proptest! {
        #[test]
        fn metric_identities(pred in proptest::collection::btree_set(0u8..12, 0..8),
                             gold in proptest::collection::btree_set(0u8..12, 1..8)) {
            let p: Vec<String> = pred.iter().map(|x| format!("a{x}")).collect();
            let g: Vec<String> = gold.iter().map(|x| format!("a{x}")).collect();
            let m = strict_f1(&p, &g).unwrap();
            prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
            prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
            prop_assert_eq!(m.f1 == 0.0, pred.intersection(&gold).count() == 0);
            if !pred.is_empty() {
                let swapped = strict_f1(&g, &p).unwrap();
                prop_assert!(close(swapped.precision, m.recall));
                prop_assert!(close(swapped.recall, m.precision));
                prop_assert!(close(swapped.f1, m.f1));
            }
        }
    }

    #[test]
    fn latency_stats() {
        let s = LatencyStats::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(close(s.mean_ms, 2.5));
        assert!(close(s.sd_ms, (5.0f64 / 3.0).sqrt()));
        assert_eq!(s.p95_ms, 4.0);
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(LatencyStats::from_samples(&xs).unwrap().p95_ms, 95.0);
        assert!(LatencyStats::from_samples(&[]).is_none());
    }

    #[test]
    fn mode_lists() {
        assert_eq!(Mode::parse_list("all").unwrap().len(), 4);
        assert_eq!(Mode::parse_list("hybrid, keyword_only").unwrap(), vec![Mode::Hybrid, Mode::KeywordOnly]);
        assert!(Mode::parse_list("bogus").is_err());
    }

    #[test]
    fn corpus_parsing_errors() {
        assert!(matches!(parse_corpus("{nope"), Err(EvalError::MalformedCase { line: 1, .. })));
        let empty_gold = r#"{"query_id":"q","doc_id":"d","family":"temporal","utterance":"x","gold_anchor_ids":[]}"#;
        assert!(matches!(parse_corpus(empty_gold), Err(EvalError::MalformedCase { .. })));
    }

    fn tiny() -> DocumentRecord {
        let texts = [
            "1. The complaint was lodged at midnight.",
            "2. A dagger with a bone hilt was seized.",
            "3. The ledger entries were forged.",
        ];
        let spans = texts
            .iter()
            .enumerate()
            .map(|(i, t)| LayoutSpan {
                span_id: format!("s{i}"),
                section_type: AnchorKind::Para,
                page_number: 1,
                bbox_coords: BBoxCoords { x0: 0.1, y0: i as f64 / 10.0, x1: 0.9, y1: i as f64 / 10.0 + 0.05 },
                content: t.to_string(),
                table: None,
                char_range: None,
            })
            .collect();
        parse_layout(&LayoutPayload { doc_id: "tiny".into(), page_count: 1, spans }).unwrap()
    }

    #[test]
    fn run_is_reproducible_and_checks_documents() {
        let corpus = parse_corpus(concat!(
            r#"{"query_id":"t1","doc_id":"tiny","family":"temporal","utterance":"go to paragraph 2","gold_anchor_ids":["tiny:00001"]}"#,
            "\n",
            r#"{"query_id":"c1","doc_id":"tiny","family":"contextual","utterance":"dagger with a bone hilt","gold_anchor_ids":["tiny:00001"]}"#,
            "\n",
        ))
        .unwrap();
        let ev = Evaluator::new([tiny()], EngineConfig::default());
        let a = ev.run(&corpus, &Mode::ALL).unwrap();
        let b = ev.run(&corpus, &Mode::ALL).unwrap();
        for (x, y) in a.modes.iter().zip(&b.modes) {
            assert_eq!(x.strict_f1, y.strict_f1);
            let px: Vec<_> = x.outcomes.iter().map(|o| &o.predicted).collect();
            let py: Vec<_> = y.outcomes.iter().map(|o| &o.predicted).collect();
            assert_eq!(px, py);
            assert!(close(x.strict_f1, harmonic(x.precision, x.recall)));
        }
        assert_eq!(a.mode(Mode::KeywordOnly).unwrap().strict_f1, 1.0);
        assert!(a.to_table().contains("late_window_keyword"));

        let mut bad = corpus.clone();
        bad[0].doc_id = "ghost".into();
        assert!(matches!(ev.run(&bad, &Mode::ALL), Err(EvalError::MissingDocument(_))));
        bad[0].doc_id = "tiny".into();
        bad[0].gold_anchor_ids = vec!["tiny:00099".into()];
        assert!(matches!(ev.run(&bad, &Mode::ALL), Err(EvalError::MalformedCase { .. })));
    }
}
