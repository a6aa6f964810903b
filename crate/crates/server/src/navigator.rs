//! Command execution over loaded documents, independent of transport.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use anchornav_core::config::AppConfig;
use anchornav_core::dense::{EmbeddingProvider, HashedTrigramProvider};
use anchornav_core::engine::{DocumentIndex, EngineError};
use anchornav_core::fusion::{Candidate, FusionOverrides, RetrievalDecision};
use anchornav_core::ingest::{parse_layout_json, BBox, IngestError, TableRef};
use anchornav_core::router::{Intent, IntentKind, Relative, Router, TemporalSlots, ViewerAction};
use anchornav_core::synopsis::{ScopeConfig, Synopsis};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditLog, AuditRecord};
use crate::clients::{HttpBackoff, HttpEmbeddingProvider};
use crate::session::{EvidenceItem, Pending, Session, SessionStore};

const SNIPPET_CHARS: usize = 160;

#[derive(Debug, Error)]
pub enum NavError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("document {0:?} already loaded")]
    Duplicate(String),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl NavError {
    pub fn status(&self) -> u16 {
        match self {
            NavError::Schema(_) | NavError::BadRequest(_) => 400,
            NavError::Duplicate(_) => 409,
            NavError::UnknownDocument(_) | NavError::UnknownSession(_) => 404,
            NavError::Unprocessable(_) => 422,
            NavError::Internal(_) => 500,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            NavError::Schema(_) => "schema_violation",
            NavError::Duplicate(_) => "duplicate_document",
            NavError::UnknownDocument(_) => "unknown_document",
            NavError::UnknownSession(_) => "unknown_session",
            NavError::Unprocessable(_) => "unprocessable",
            NavError::BadRequest(_) => "bad_request",
            NavError::Internal(_) => "internal",
        }
    }
}

impl From<EngineError> for NavError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Ingest(e) => NavError::Schema(e.to_string()),
            other => NavError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub doc_id: String,
    pub anchor_count: usize,
    pub page_count: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandRequest {
    pub transcript: String,
    #[serde(default)]
    pub confirm: bool,
    /// Defaults to the document id.
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub fusion: Option<FusionOverrides>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyMs {
    pub route: f64,
    pub retrieve: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NavAction {
    ScrollToAnchor {
        anchor_id: String,
        page: u32,
        highlight_ids: Vec<String>,
        evidence: Vec<EvidenceItem>,
    },
    ShowDisambiguation {
        candidates: Vec<EvidenceItem>,
    },
    ShowSynopsis {
        synopsis: Synopsis,
    },
    AwaitConfirm {
        echo: String,
        intent: Intent,
    },
    ViewerControl {
        action: ViewerAction,
        highlights_on: bool,
    },
    Abstain {
        reason: String,
    },
}

impl NavAction {
    pub fn name(&self) -> &'static str {
        match self {
            NavAction::ScrollToAnchor { .. } => "scroll_to_anchor",
            NavAction::ShowDisambiguation { .. } => "show_disambiguation",
            NavAction::ShowSynopsis { .. } => "show_synopsis",
            NavAction::AwaitConfirm { .. } => "await_confirm",
            NavAction::ViewerControl { .. } => "viewer_control",
            NavAction::Abstain { .. } => "abstain",
        }
    }

    /// Every anchor id the action mentions, in order of appearance.
    pub fn anchor_ids(&self) -> Vec<String> {
        match self {
            NavAction::ScrollToAnchor { anchor_id, highlight_ids, evidence, .. } => std::iter::once(anchor_id)
                .chain(highlight_ids)
                .chain(evidence.iter().map(|e| &e.anchor_id))
                .cloned()
                .collect(),
            NavAction::ShowDisambiguation { candidates } => candidates.iter().map(|c| c.anchor_id.clone()).collect(),
            NavAction::ShowSynopsis { synopsis } => {
                synopsis.cited_anchor_ids().into_iter().map(str::to_string).collect()
            }
            NavAction::AwaitConfirm { .. } | NavAction::ViewerControl { .. } | NavAction::Abstain { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NavResponse {
    pub session_id: String,
    pub transcript_echo: String,
    pub intent: Intent,
    pub action: NavAction,
    pub latency_ms: LatencyMs,
    /// Dense retrieval was unavailable and the answer is lexical only.
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorView {
    pub anchor_id: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub page: u32,
    pub bbox: BBox,
    pub bboxes: Vec<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<u32>,
    pub section_path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableRef>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancelResponse {
    pub session_id: String,
    pub cancelled: bool,
}

pub struct Navigator {
    cfg: AppConfig,
    router: Router,
    provider: Arc<dyn EmbeddingProvider>,
    scopes: ScopeConfig,
    docs: RwLock<HashMap<String, Arc<DocumentIndex>>>,
    sessions: SessionStore,
    audit: AuditLog,
}

impl std::fmt::Debug for Navigator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Navigator")
            .field("documents", &self.docs.read().len())
            .field("sessions", &self.sessions.len())
            .field("audit", &self.audit)
            .finish_non_exhaustive()
    }
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl Navigator {
    pub fn new(cfg: AppConfig, router: Router, provider: Arc<dyn EmbeddingProvider>, scopes: ScopeConfig, audit: AuditLog) -> Self {
        let sessions = SessionStore::new(Duration::from_secs(cfg.server.session_ttl_secs), cfg.server.breadcrumb_cap);
        Self { cfg, router, provider, scopes, docs: RwLock::new(HashMap::new()), sessions, audit }
    }

    /// Clients, scopes and audit file as the configuration describes.
    pub fn from_config(cfg: AppConfig) -> Result<Self, NavError> {
        let mut router = match &cfg.router.backoff_url {
            Some(url) => Router::new(Arc::new(HttpBackoff::new(url, Duration::from_millis(cfg.router.deadline_ms)))),
            None => Router::stub(),
        };
        router.threshold = cfg.router.threshold;
        let scopes = cfg.scopes().map_err(|e| NavError::Internal(e.to_string()))?;
        router.grammar = anchornav_core::router::Grammar::with_scopes(scopes.names().map(str::to_string));
        let e = &cfg.embedding;
        let provider: Arc<dyn EmbeddingProvider> = match &e.provider_url {
            Some(url) => Arc::new(HttpEmbeddingProvider::new(url, e.dim, Duration::from_millis(e.timeout_ms))),
            None => Arc::new(HashedTrigramProvider::new(e.dim, e.seed)),
        };
        let audit = AuditLog::open(&cfg.server.audit_path).map_err(|e| NavError::Internal(e.to_string()))?;
        Ok(Self::new(cfg, router, provider, scopes, audit))
    }

    /// Default configuration, stub back-off, in-memory audit.
    pub fn local(cfg: AppConfig) -> Self {
        let provider = Arc::new(HashedTrigramProvider::new(cfg.embedding.dim, cfg.embedding.seed));
        Self::new(cfg, Router::stub(), provider, ScopeConfig::default(), AuditLog::in_memory())
    }

    pub fn config(&self) -> &AppConfig {
        &self.cfg
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    pub fn ingest_json(&self, json: &str) -> Result<IngestSummary, NavError> {
        let record = parse_layout_json(json).map_err(|e: IngestError| NavError::Schema(e.to_string()))?;
        let doc_id = record.doc_id.clone();
        if self.docs.read().contains_key(&doc_id) {
            return Err(NavError::Duplicate(doc_id));
        }
        let index = DocumentIndex::build(record, &self.cfg.retrieval, self.provider.clone(), &self.scopes, now_millis())?;
        let summary = IngestSummary {
            doc_id: doc_id.clone(),
            anchor_count: index.record.anchors.len(),
            page_count: index.record.page_count,
        };
        let mut docs = self.docs.write();
        if docs.contains_key(&doc_id) {
            return Err(NavError::Duplicate(doc_id));
        }
        docs.insert(doc_id, Arc::new(index));
        Ok(summary)
    }

    pub fn document(&self, doc_id: &str) -> Result<Arc<DocumentIndex>, NavError> {
        self.docs.read().get(doc_id).cloned().ok_or_else(|| NavError::UnknownDocument(doc_id.to_string()))
    }

    pub fn doc_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.docs.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn anchors(&self, doc_id: &str) -> Result<Vec<AnchorView>, NavError> {
        let doc = self.document(doc_id)?;
        let r = &doc.record;
        Ok(r.anchors
            .iter()
            .map(|a| AnchorView {
                anchor_id: a.anchor_id.clone(),
                kind: a.kind.as_str().to_string(),
                page: a.page(),
                bbox: *a.bbox(),
                bboxes: a.bboxes.clone(),
                ordinal: a.ordinal,
                section_path: a.section_path.clone(),
                table: a.table.clone(),
                text: r.text(a).to_string(),
            })
            .collect())
    }

    pub fn synopsis(&self, doc_id: &str, scope: &str) -> Result<Synopsis, NavError> {
        let doc = self.document(doc_id)?;
        doc.synopsis(scope)
            .cloned()
            .ok_or_else(|| NavError::BadRequest(format!("unknown scope {scope:?}")))
    }

    pub fn audit(&self, session: Option<&str>) -> Vec<AuditRecord> {
        self.audit.records(session)
    }

    pub fn cancel(&self, doc_id: &str, session_id: Option<&str>) -> Result<CancelResponse, NavError> {
        self.document(doc_id)?;
        let sid = session_id.unwrap_or(doc_id);
        let handle = self
            .sessions
            .get(sid)
            .ok_or_else(|| NavError::UnknownSession(sid.to_string()))?;
        let mut s = handle.lock();
        if s.doc_id != doc_id {
            return Err(NavError::UnknownSession(sid.to_string()));
        }
        let cancelled = s.pending.take().is_some();
        Ok(CancelResponse { session_id: sid.to_string(), cancelled })
    }

    fn needs_confirm(&self, intent: &Intent) -> bool {
        match &intent.kind {
            IntentKind::Temporal(t) => t.is_jump(),
            _ => self.cfg.server.confirm_all,
        }
    }

    pub fn command(&self, doc_id: &str, req: &CommandRequest) -> Result<NavResponse, NavError> {
        let t0 = Instant::now();
        let doc = self.document(doc_id)?;
        let fusion = match &req.fusion {
            Some(o) => {
                let f = self.cfg.retrieval.fusion.with_overrides(o);
                f.validate().map_err(NavError::BadRequest)?;
                f
            }
            None => self.cfg.retrieval.fusion,
        };
        let sid = req.session_id.clone().unwrap_or_else(|| doc_id.to_string());
        let handle = self
            .sessions
            .get_or_create(&sid, doc_id)
            .ok_or_else(|| NavError::UnknownSession(sid.clone()))?;
        let mut session = handle.lock();

        let t_route = Instant::now();
        let pending = session.pending.take();
        let intent = match pending {
            Some(p) if req.confirm && p.transcript == req.transcript => p.intent,
            _ => self.router.route(&req.transcript),
        };
        let route_ms = ms(t_route);

        if !req.confirm && self.needs_confirm(&intent) {
            session.pending = Some(Pending { transcript: req.transcript.clone(), intent: intent.clone() });
            let action = NavAction::AwaitConfirm { echo: req.transcript.clone(), intent: intent.clone() };
            return Ok(self.respond(&sid, req, intent, action, route_ms, 0.0, false, t0));
        }

        let t_exec = Instant::now();
        let (action, degraded) = execute(&doc, &mut session, &intent, &fusion)?;
        let retrieve_ms = ms(t_exec);

        self.audit
            .append(AuditRecord {
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                session_id: sid.clone(),
                doc_id: doc_id.to_string(),
                intent_kind: intent.kind.name().to_string(),
                slots: slots_json(&intent.kind),
                decision: action.name().to_string(),
                anchor_ids: action.anchor_ids(),
            })
            .map_err(|e| NavError::Internal(format!("audit append: {e}")))?;
        drop(session);
        Ok(self.respond(&sid, req, intent, action, route_ms, retrieve_ms, degraded, t0))
    }

    #[allow(clippy::too_many_arguments)]
    fn respond(
        &self,
        sid: &str,
        req: &CommandRequest,
        intent: Intent,
        action: NavAction,
        route: f64,
        retrieve: f64,
        degraded: bool,
        t0: Instant,
    ) -> NavResponse {
        let total = ms(t0).max(route + retrieve);
        NavResponse {
            session_id: sid.to_string(),
            transcript_echo: req.transcript.clone(),
            intent,
            action,
            latency_ms: LatencyMs { route, retrieve, total },
            degraded,
        }
    }
}

fn slots_json(kind: &IntentKind) -> serde_json::Value {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.get("slots").cloned())
        .unwrap_or(serde_json::Value::Null)
}

fn abstain(reason: impl Into<String>) -> NavAction {
    NavAction::Abstain { reason: reason.into() }
}

fn evidence(doc: &DocumentIndex, candidates: &[Candidate]) -> Vec<EvidenceItem> {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let anchor = &doc.record.anchors[c.position];
            let text = doc.record.text(anchor);
            let snippet = match text.char_indices().nth(SNIPPET_CHARS) {
                Some((cut, _)) => format!("{}…", &text[..cut]),
                None => text.to_string(),
            };
            EvidenceItem {
                rank: i + 1,
                anchor_id: c.anchor_id.clone(),
                page: anchor.page(),
                fused: c.fused,
                lexical_norm: c.lexical_norm,
                dense_norm: c.dense_norm,
                snippet,
            }
        })
        .collect()
}

fn scroll(doc: &DocumentIndex, session: &mut Session, position: usize, highlight_ids: Vec<String>) -> NavAction {
    let anchor = &doc.record.anchors[position];
    session.jump(&anchor.anchor_id);
    let mut highlight_ids = highlight_ids;
    if !highlight_ids.contains(&anchor.anchor_id) {
        highlight_ids.insert(0, anchor.anchor_id.clone());
    }
    NavAction::ScrollToAnchor {
        anchor_id: anchor.anchor_id.clone(),
        page: anchor.page(),
        highlight_ids,
        evidence: session.evidence.clone(),
    }
}

fn scroll_to_hit(doc: &DocumentIndex, session: &mut Session, idx: usize) -> NavAction {
    session.hit_cursor = Some(idx);
    let id = session.evidence[idx].anchor_id.clone();
    let position = doc.record.position(&id).expect("evidence anchors come from this document");
    scroll(doc, session, position, vec![id])
}

fn execute(
    doc: &DocumentIndex,
    session: &mut Session,
    intent: &Intent,
    fusion: &anchornav_core::fusion::FusionConfig,
) -> Result<(NavAction, bool), NavError> {
    let action = match &intent.kind {
        IntentKind::Temporal(slots) => temporal(doc, session, slots)?,
        IntentKind::Contextual(c) => {
            let r = doc.retrieve(&c.query_text, &c.filters, fusion);
            let action = match &r.decision {
                RetrievalDecision::Answer { top, highlight } => {
                    session.evidence = evidence(doc, highlight);
                    session.hit_cursor = Some(0);
                    let ids = highlight.iter().map(|h| h.anchor_id.clone()).collect();
                    scroll(doc, session, top.position, ids)
                }
                RetrievalDecision::Disambiguate { options, .. } => {
                    session.evidence = evidence(doc, options);
                    session.hit_cursor = None;
                    NavAction::ShowDisambiguation { candidates: session.evidence.clone() }
                }
                RetrievalDecision::Abstain { reason } => abstain(reason.clone()),
            };
            return Ok((action, r.degraded));
        }
        IntentKind::Summarization(s) => match doc.synopsis(&s.scope) {
            Some(syn) => NavAction::ShowSynopsis { synopsis: syn.clone() },
            None => abstain(format!("no synopsis for scope {:?}", s.scope)),
        },
        IntentKind::ViewerControl(v) => match v.action {
            ViewerAction::Back => match session.back() {
                Some(id) => {
                    let position = doc.record.position(&id).expect("breadcrumb anchors come from this document");
                    let anchor = &doc.record.anchors[position];
                    NavAction::ScrollToAnchor {
                        anchor_id: id.clone(),
                        page: anchor.page(),
                        highlight_ids: vec![id],
                        evidence: session.evidence.clone(),
                    }
                }
                None => abstain("breadcrumb is empty"),
            },
            ViewerAction::ToggleHighlights => {
                session.highlights_on = !session.highlights_on;
                NavAction::ViewerControl { action: v.action, highlights_on: session.highlights_on }
            }
        },
    };
    Ok((action, false))
}

fn temporal(doc: &DocumentIndex, session: &mut Session, slots: &TemporalSlots) -> Result<NavAction, NavError> {
    let Some(rel) = slots.relative else {
        return Ok(match doc.resolve_temporal(slots) {
            Some(p) => scroll(doc, session, p, Vec::new()),
            None => abstain(match (slots.paragraph, slots.page) {
                (Some(n), _) => format!("no paragraph {n}"),
                (_, Some(n)) => format!("no page {n}"),
                _ => "nothing to resolve".to_string(),
            }),
        });
    };
    Ok(match rel {
        Relative::OpenN => {
            let n = slots.item.unwrap_or(0) as usize;
            if session.evidence.is_empty() {
                return Err(NavError::Unprocessable("evidence list is empty".into()));
            }
            if n == 0 || n > session.evidence.len() {
                return Err(NavError::Unprocessable(format!(
                    "item {n} outside evidence list of {}",
                    session.evidence.len()
                )));
            }
            scroll_to_hit(doc, session, n - 1)
        }
        Relative::NextHit | Relative::PrevHit => {
            let len = session.evidence.len();
            if len == 0 {
                return Ok(abstain("no hits"));
            }
            let next = match (rel, session.hit_cursor) {
                (Relative::NextHit, None) => 0,
                (Relative::NextHit, Some(i)) => (i + 1).min(len - 1),
                (_, None) => 0,
                (_, Some(i)) => i.saturating_sub(1),
            };
            scroll_to_hit(doc, session, next)
        }
        Relative::PrevSection => {
            let from = session
                .current
                .as_deref()
                .and_then(|id| doc.record.position(id))
                .unwrap_or(0);
            match doc.previous_section(from) {
                Some(p) => scroll(doc, session, p, Vec::new()),
                None => abstain("no previous section"),
            }
        }
    })
}
