//! Grammar-first command routing with a pluggable back-off classifier.
//!
//! Accepted command forms (case-insensitive, number words one..ninety-nine
//! normalized to digits):
//!
//! ```text
//! go to (page|paragraph|para) N          (page|paragraph|para) N
//! go to (paragraph|para) N (in|of) [the] SECTION [section]
//! open N            next hit            previous hit        previous section
//! toggle highlights  back | go back
//! [go to] table ID row R col[umn] C      (provisional table-region form, 1-based)
//! highlight FREE TEXT
//! (summarize|summarise) the SCOPE
//! ```

use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BACKOFF_THRESHOLD: f64 = 0.5;
pub const FALLBACK_CONFIDENCE: f64 = 0.5;
pub const STUB_CONFIDENCE: f64 = 0.8;
pub const MAX_REWRITES: usize = 3;
pub const DEFAULT_SCOPES: &[&str] = &["charges", "petition", "document"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relative {
    NextHit,
    PrevHit,
    PrevSection,
    OpenN,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalSlots {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraph: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative: Option<Relative>,
    /// 1-based evidence item for `open_n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<u32>,
}

impl TemporalSlots {
    pub fn is_empty(&self) -> bool {
        self.page.is_none() && self.paragraph.is_none() && self.section.is_none() && self.relative.is_none()
    }

    /// Absolute jumps (page or paragraph) go through the confirm loop.
    pub fn is_jump(&self) -> bool {
        self.relative.is_none() && (self.page.is_some() || self.paragraph.is_some())
    }
}

/// Zero-based table coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRegion {
    pub table_id: String,
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Filters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub party: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exhibit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_region: Option<TableRegion>,
}

impl Filters {
    pub fn is_empty(&self) -> bool {
        self == &Filters::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextualSlots {
    pub query_text: String,
    #[serde(default, skip_serializing_if = "Filters::is_empty")]
    pub filters: Filters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizationSlots {
    pub scope: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewerAction {
    ToggleHighlights,
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewerControlSlots {
    pub action: ViewerAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "slots", rename_all = "snake_case")]
pub enum IntentKind {
    Temporal(TemporalSlots),
    Contextual(ContextualSlots),
    Summarization(SummarizationSlots),
    ViewerControl(ViewerControlSlots),
}

impl IntentKind {
    pub fn name(&self) -> &'static str {
        match self {
            IntentKind::Temporal(_) => "temporal",
            IntentKind::Contextual(_) => "contextual",
            IntentKind::Summarization(_) => "summarization",
            IntentKind::ViewerControl(_) => "viewer_control",
        }
    }

    fn is_well_formed(&self) -> bool {
        match self {
            IntentKind::Temporal(t) => !t.is_empty() && (t.relative != Some(Relative::OpenN) || t.item.is_some()),
            IntentKind::Contextual(_) | IntentKind::ViewerControl(_) => true,
            IntentKind::Summarization(s) => !s.scope.is_empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentSource {
    Grammar,
    Backoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    #[serde(flatten)]
    pub kind: IntentKind,
    pub confidence: f64,
    pub source: IntentSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rewrites: Vec<String>,
}

impl Intent {
    pub fn grammar(kind: IntentKind) -> Self {
        Self { kind, confidence: 1.0, source: IntentSource::Grammar, rewrites: Vec::new() }
    }

    pub fn fallback(transcript: &str) -> Self {
        Self {
            kind: IntentKind::Contextual(ContextualSlots {
                query_text: transcript.trim().to_string(),
                filters: Filters::default(),
            }),
            confidence: FALLBACK_CONFIDENCE,
            source: IntentSource::Backoff,
            rewrites: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Number words
// ---------------------------------------------------------------------------

const UNITS: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];
const TENS: [&str; 8] = ["twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];

fn unit_value(w: &str) -> Option<u32> {
    UNITS.iter().position(|u| *u == w).map(|p| p as u32)
}

fn tens_value(w: &str) -> Option<u32> {
    TENS.iter().position(|t| *t == w).map(|p| 20 + 10 * p as u32)
}

/// Replace spelled-out numbers (one..ninety-nine) in a lowercased,
/// whitespace-separated string with digits.
pub fn normalize_number_words(text: &str) -> String {
    let words: Vec<&str> = text.split(' ').filter(|w| !w.is_empty()).collect();
    let mut out: Vec<String> = Vec::with_capacity(words.len());
    let mut i = 0;
    while i < words.len() {
        let w = words[i];
        if let Some((t, u)) = w.split_once('-') {
            if let (Some(tv), Some(uv)) = (tens_value(t), unit_value(u)) {
                if (1..=9).contains(&uv) {
                    out.push((tv + uv).to_string());
                    i += 1;
                    continue;
                }
            }
        }
        if let Some(tv) = tens_value(w) {
            let unit = words.get(i + 1).and_then(|n| unit_value(n)).filter(|u| (1..=9).contains(u));
            match unit {
                Some(uv) => {
                    out.push((tv + uv).to_string());
                    i += 2;
                }
                None => {
                    out.push(tv.to_string());
                    i += 1;
                }
            }
            continue;
        }
        match unit_value(w) {
            Some(uv) if uv > 0 => out.push(uv.to_string()),
            _ => out.push(w.to_string()),
        }
        i += 1;
    }
    out.join(" ")
}

/// Lowercase, unify apostrophes, drop sentence punctuation, collapse spaces.
fn plain(transcript: &str) -> String {
    let lowered: String = transcript
        .to_lowercase()
        .chars()
        .map(|c| match c {
            '\u{2019}' | '\u{2018}' => '\'',
            ',' | '!' | '?' | ';' | ':' | '"' | '\u{201c}' | '\u{201d}' => ' ',
            c if c.is_whitespace() => ' ',
            c => c,
        })
        .collect();
    let joined = lowered.split(' ').filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ");
    joined.trim_end_matches('.').trim().to_string()
}

// ---------------------------------------------------------------------------
// Grammar
// ---------------------------------------------------------------------------

struct Rules {
    goto: Regex,
    goto_section: Regex,
    bare: Regex,
    open: Regex,
    table: Regex,
    highlight: Regex,
    summarize: Regex,
    statute: Regex,
    party: Regex,
    exhibit: Regex,
}

static RULES: LazyLock<Rules> = LazyLock::new(|| {
    let re = |p: &str| Regex::new(p).expect("grammar regex");
    Rules {
        goto: re(r"^(?:please )?go to (page|paragraph|para) (\d+)$"),
        goto_section: re(r"^(?:please )?go to (?:paragraph|para) (\d+) (?:in|of) (?:the )?(.+?)(?: section)?$"),
        bare: re(r"^(page|paragraph|para) (\d+)$"),
        open: re(r"^open (\d+)$"),
        table: re(r"^(?:go to )?table (\S+) row (\d+) col(?:umn)? (\d+)$"),
        highlight: re(r"(?i)^\s*highlight\s+(.+?)\s*$"),
        summarize: re(r"^(?:please )?summari[sz]e the (\S+)$"),
        statute: re(r"(?i)\b(?:section|sec\.?)\s*(\d+[a-z]?)\b"),
        party: re(r"(?i)\b([pdc]w)\s*-?\s*(\d+)\b"),
        exhibit: re(r"(?i)\b(?:exhibit|exh\.?|ex\.)\s*([a-z]?-?\d+[a-z]?)\b"),
    }
});

#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub scopes: Vec<String>,
}

impl Default for Grammar {
    fn default() -> Self {
        Self { scopes: DEFAULT_SCOPES.iter().map(|s| s.to_string()).collect() }
    }
}

impl Grammar {
    pub fn with_scopes(scopes: impl IntoIterator<Item = String>) -> Self {
        Self { scopes: scopes.into_iter().collect() }
    }

    /// `None` means no grammar rule matched.
    pub fn parse(&self, transcript: &str) -> Option<Intent> {
        let r = &*RULES;
        if let Some(c) = r.highlight.captures(transcript) {
            let query = c[1].trim_end_matches(['.', '?', '!']).trim().to_string();
            if query.is_empty() {
                return None;
            }
            let filters = extract_filters(&query);
            return Some(Intent::grammar(IntentKind::Contextual(ContextualSlots { query_text: query, filters })));
        }

        let text = normalize_number_words(&plain(transcript));
        let temporal = |slots: TemporalSlots| Some(Intent::grammar(IntentKind::Temporal(slots)));
        let num = |s: &str| s.parse::<u32>().ok();

        if let Some(c) = r.goto.captures(&text).or_else(|| r.bare.captures(&text)) {
            let n = num(&c[2])?;
            let mut slots = TemporalSlots::default();
            if &c[1] == "page" {
                slots.page = Some(n);
            } else {
                slots.paragraph = Some(n);
            }
            return temporal(slots);
        }
        if let Some(c) = r.goto_section.captures(&text) {
            return temporal(TemporalSlots {
                paragraph: Some(num(&c[1])?),
                section: Some(c[2].to_string()),
                ..Default::default()
            });
        }
        if let Some(c) = r.open.captures(&text) {
            let n = num(&c[1]).filter(|&n| n >= 1)?;
            return temporal(TemporalSlots { relative: Some(Relative::OpenN), item: Some(n), ..Default::default() });
        }
        let relative = match text.as_str() {
            "next hit" => Some(Relative::NextHit),
            "previous hit" => Some(Relative::PrevHit),
            "previous section" => Some(Relative::PrevSection),
            _ => None,
        };
        if let Some(rel) = relative {
            return temporal(TemporalSlots { relative: Some(rel), ..Default::default() });
        }
        let action = match text.as_str() {
            "toggle highlights" | "toggle highlight" => Some(ViewerAction::ToggleHighlights),
            "back" | "go back" => Some(ViewerAction::Back),
            _ => None,
        };
        if let Some(action) = action {
            return Some(Intent::grammar(IntentKind::ViewerControl(ViewerControlSlots { action })));
        }
        if let Some(c) = r.table.captures(&text) {
            let row = num(&c[2]).filter(|&n| n >= 1)?;
            let col = num(&c[3]).filter(|&n| n >= 1)?;
            let region = TableRegion { table_id: c[1].to_string(), row: row - 1, col: col - 1 };
            return Some(Intent::grammar(IntentKind::Contextual(ContextualSlots {
                query_text: transcript.trim().to_string(),
                filters: Filters { table_region: Some(region), ..Default::default() },
            })));
        }
        if let Some(c) = r.summarize.captures(&text) {
            let scope = c[1].to_string();
            if self.scopes.contains(&scope) {
                return Some(Intent::grammar(IntentKind::Summarization(SummarizationSlots { scope })));
            }
        }
        None
    }
}

/// Statute, party and exhibit mentions inside free text.
pub fn extract_filters(text: &str) -> Filters {
    let r = &*RULES;
    Filters {
        statute: r.statute.captures(text).map(|c| c[1].to_lowercase()),
        party: r
            .party
            .captures(text)
            .map(|c| format!("{}-{}", c[1].to_uppercase(), &c[2])),
        exhibit: r.exhibit.captures(text).map(|c| c[1].to_uppercase()),
        table_region: None,
    }
}

// ---------------------------------------------------------------------------
// Back-off
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackoffRequest {
    pub transcript: String,
}

/// Wire form of a back-off answer: `{kind, slots, confidence, rewrites}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackoffResponse {
    pub kind: String,
    #[serde(default)]
    pub slots: serde_json::Value,
    pub confidence: f64,
    #[serde(default)]
    pub rewrites: Vec<String>,
}

impl BackoffResponse {
    pub fn from_intent(kind: &IntentKind, confidence: f64, rewrites: Vec<String>) -> Self {
        let v = serde_json::to_value(kind).expect("intent serializes");
        Self {
            kind: v["kind"].as_str().unwrap_or_default().to_string(),
            slots: v.get("slots").cloned().unwrap_or(serde_json::Value::Null),
            confidence,
            rewrites,
        }
    }

    pub fn to_intent_kind(&self) -> Option<IntentKind> {
        let v = serde_json::json!({ "kind": self.kind, "slots": self.slots });
        serde_json::from_value::<IntentKind>(v).ok().filter(IntentKind::is_well_formed)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackoffError {
    #[error("back-off unavailable: {0}")]
    Unavailable(String),
    #[error("back-off deadline exceeded")]
    Timeout,
    #[error("malformed back-off response: {0}")]
    Malformed(String),
}

pub trait BackoffClient: Send + Sync {
    fn classify(&self, request: &BackoffRequest) -> Result<BackoffResponse, BackoffError>;
}

/// Deterministic keyword heuristics standing in for a hosted model.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubBackoff;

const POLITENESS: &[&str] = &["please", "kindly"];

impl StubBackoff {
    pub fn respond(&self, transcript: &str) -> BackoffResponse {
        let lower = transcript.to_lowercase();
        let kind = if lower.contains("summar") {
            let scope = if lower.contains("petition") {
                "petition"
            } else if lower.contains("charge") {
                "charges"
            } else {
                "document"
            };
            IntentKind::Summarization(SummarizationSlots { scope: scope.into() })
        } else if let Some(kind) = stub_temporal(&lower) {
            kind
        } else {
            IntentKind::Contextual(ContextualSlots {
                query_text: strip_politeness(transcript),
                filters: extract_filters(transcript),
            })
        };
        BackoffResponse::from_intent(&kind, STUB_CONFIDENCE, Vec::new())
    }
}

fn stub_temporal(lower: &str) -> Option<IntentKind> {
    let para = lower.find("para");
    let page = lower.find("page");
    if para.is_none() && page.is_none() {
        return None;
    }
    let numeric = normalize_number_words(&plain(lower));
    let n: u32 = numeric
        .split(|c: char| !c.is_ascii_digit())
        .find(|s| !s.is_empty())?
        .parse()
        .ok()?;
    let is_para = match (para, page) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    };
    let mut slots = TemporalSlots::default();
    if is_para {
        slots.paragraph = Some(n);
    } else {
        slots.page = Some(n);
    }
    Some(IntentKind::Temporal(slots))
}

fn strip_politeness(transcript: &str) -> String {
    let mut rest = transcript.trim();
    loop {
        let lower = rest.to_lowercase();
        let Some(word) = POLITENESS.iter().find(|w| {
            lower.starts_with(*w) && lower[w.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric())
        }) else {
            break;
        };
        rest = rest[word.len()..].trim_start_matches([',', ' ']).trim_start();
    }
    rest.to_string()
}

impl BackoffClient for StubBackoff {
    fn classify(&self, request: &BackoffRequest) -> Result<BackoffResponse, BackoffError> {
        Ok(self.respond(&request.transcript))
    }
}

#[derive(Clone)]
pub struct Router {
    pub grammar: Grammar,
    pub backoff: Arc<dyn BackoffClient>,
    pub threshold: f64,
}

impl Router {
    pub fn new(backoff: Arc<dyn BackoffClient>) -> Self {
        Self { grammar: Grammar::default(), backoff, threshold: DEFAULT_BACKOFF_THRESHOLD }
    }

    pub fn stub() -> Self {
        Self::new(Arc::new(StubBackoff))
    }

    /// Total: always yields an intent.
    pub fn route(&self, transcript: &str) -> Intent {
        if let Some(intent) = self.grammar.parse(transcript) {
            return intent;
        }
        let request = BackoffRequest { transcript: transcript.to_string() };
        let Ok(response) = self.backoff.classify(&request) else {
            return Intent::fallback(transcript);
        };
        let confidence = response.confidence;
        if !(0.0..=1.0).contains(&confidence) || confidence < self.threshold {
            return Intent::fallback(transcript);
        }
        match response.to_intent_kind() {
            Some(kind) => Intent {
                kind,
                confidence,
                source: IntentSource::Backoff,
                rewrites: response.rewrites.into_iter().take(MAX_REWRITES).collect(),
            },
            None => Intent::fallback(transcript),
        }
    }
}

impl std::fmt::Debug for Router {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Router")
            .field("grammar", &self.grammar)
            .field("threshold", &self.threshold)
            .finish_non_exhaustive()
    }
}
