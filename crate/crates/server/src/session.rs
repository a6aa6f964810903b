//! In-memory sessions: breadcrumbs, pending confirmations, evidence lists.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anchornav_core::router::Intent;
use parking_lot::{FairMutex, Mutex};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct Pending {
    pub transcript: String,
    pub intent: Intent,
}

/// Ranked entry of the evidence panel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvidenceItem {
    /// 1-based, as spoken in "open N".
    pub rank: usize,
    pub anchor_id: String,
    pub page: u32,
    pub fused: f64,
    pub lexical_norm: f64,
    pub dense_norm: f64,
    pub snippet: String,
}

#[derive(Debug)]
pub struct Session {
    pub session_id: String,
    pub doc_id: String,
    pub current: Option<String>,
    pub breadcrumb: VecDeque<String>,
    pub cap: usize,
    pub pending: Option<Pending>,
    pub evidence: Vec<EvidenceItem>,
    /// Index into `evidence` of the hit last shown.
    pub hit_cursor: Option<usize>,
    pub highlights_on: bool,
    last_used: Instant,
}

impl Session {
    pub fn new(session_id: &str, doc_id: &str, cap: usize) -> Self {
        Self {
            session_id: session_id.to_string(),
            doc_id: doc_id.to_string(),
            current: None,
            breadcrumb: VecDeque::new(),
            cap: cap.max(1),
            pending: None,
            evidence: Vec::new(),
            hit_cursor: None,
            highlights_on: true,
            last_used: Instant::now(),
        }
    }

    /// Move to `anchor_id`, remembering where we were.
    pub fn jump(&mut self, anchor_id: &str) {
        if let Some(prev) = self.current.take() {
            if self.breadcrumb.len() == self.cap {
                self.breadcrumb.pop_front();
            }
            self.breadcrumb.push_back(prev);
        }
        self.current = Some(anchor_id.to_string());
    }

    pub fn back(&mut self) -> Option<String> {
        let prev = self.breadcrumb.pop_back()?;
        self.current = Some(prev.clone());
        Some(prev)
    }
}

pub struct SessionStore {
    sessions: Mutex<HashMap<String, Arc<FairMutex<Session>>>>,
    ttl: Duration,
    cap: usize,
}

impl SessionStore {
    pub fn new(ttl: Duration, cap: usize) -> Self {
        Self { sessions: Mutex::new(HashMap::new()), ttl, cap }
    }

    /// Existing live session, or a fresh one bound to `doc_id`. `None` when
    /// the id is taken by another document.
    pub fn get_or_create(&self, session_id: &str, doc_id: &str) -> Option<Arc<FairMutex<Session>>> {
        let mut map = self.sessions.lock();
        self.evict_expired(&mut map);
        let entry = map
            .entry(session_id.to_string())
            .or_insert_with(|| Arc::new(FairMutex::new(Session::new(session_id, doc_id, self.cap))));
        let handle = entry.clone();
        drop(map);
        let bound = {
            let mut s = handle.lock();
            s.last_used = Instant::now();
            s.doc_id == doc_id
        };
        bound.then_some(handle)
    }

    pub fn get(&self, session_id: &str) -> Option<Arc<FairMutex<Session>>> {
        let mut map = self.sessions.lock();
        self.evict_expired(&mut map);
        map.get(session_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn evict_expired(&self, map: &mut HashMap<String, Arc<FairMutex<Session>>>) {
        let ttl = self.ttl;
        // A session busy with a command is live by definition.
        map.retain(|_, s| s.try_lock().is_none_or(|s| s.last_used.elapsed() < ttl));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breadcrumb_is_capped_oldest_first() {
        let mut s = Session::new("s", "d", 3);
        for i in 0..6 {
            s.jump(&format!("d:{i:05}"));
        }
        assert_eq!(s.breadcrumb.iter().cloned().collect::<Vec<_>>(), vec!["d:00002", "d:00003", "d:00004"]);
        assert_eq!(s.back().as_deref(), Some("d:00004"));
        assert_eq!(s.current.as_deref(), Some("d:00004"));
    }

    #[test]
    fn back_on_empty_breadcrumb() {
        let mut s = Session::new("s", "d", 50);
        assert_eq!(s.back(), None);
        s.jump("d:00001");
        assert_eq!(s.back(), None);
        s.jump("d:00002");
        assert_eq!(s.back().as_deref(), Some("d:00001"));
    }

    #[test]
    fn sessions_bind_to_one_document_and_expire() {
        let store = SessionStore::new(Duration::from_millis(30), 50);
        assert!(store.get_or_create("s1", "a").is_some());
        assert!(store.get_or_create("s1", "b").is_none());
        assert_eq!(store.len(), 1);
        std::thread::sleep(Duration::from_millis(60));
        assert!(store.get("s1").is_none());
        assert!(store.get_or_create("s1", "b").is_some());
    }
}
