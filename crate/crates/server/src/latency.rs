//! Server-side latency measurement over a query corpus.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use anchornav_core::eval::{Family, LatencyStats, QueryCase};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::navigator::{CommandRequest, LatencyMs, NavError, Navigator};

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("repetitions must be >= 1")]
    NoRepetitions,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("service unreachable: {0}")]
    ServiceUnreachable(String),
    #[error("query {query_id}: {reason}")]
    Command { query_id: String, reason: String },
}

/// Anything that executes one command and reports its server-side timing.
pub trait CommandTarget {
    fn command(&self, doc_id: &str, req: &CommandRequest) -> Result<LatencyMs, LatencyError>;
}

impl CommandTarget for Arc<Navigator> {
    fn command(&self, doc_id: &str, req: &CommandRequest) -> Result<LatencyMs, LatencyError> {
        Navigator::command(self, doc_id, req)
            .map(|r| r.latency_ms)
            .map_err(|e: NavError| LatencyError::Command { query_id: doc_id.to_string(), reason: e.to_string() })
    }
}

/// A running service reached over HTTP.
pub struct RemoteTarget {
    base: String,
    agent: ureq::Agent,
}

impl RemoteTarget {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { base: base_url.trim_end_matches('/').to_string(), agent }
    }

    pub fn health(&self) -> Result<(), LatencyError> {
        self.agent
            .get(format!("{}/healthz", self.base))
            .call()
            .map(|_| ())
            .map_err(|e| LatencyError::ServiceUnreachable(e.to_string()))
    }

    /// Uploads a layout payload; an already loaded document is fine.
    pub fn upload(&self, payload_json: &str) -> Result<(), LatencyError> {
        match self
            .agent
            .post(format!("{}/documents", self.base))
            .content_type("application/json")
            .send(payload_json)
        {
            Ok(_) | Err(ureq::Error::StatusCode(409)) => Ok(()),
            Err(ureq::Error::StatusCode(code)) => {
                Err(LatencyError::Command { query_id: "upload".into(), reason: format!("status {code}") })
            }
            Err(e) => Err(LatencyError::ServiceUnreachable(e.to_string())),
        }
    }
}

#[derive(Deserialize)]
struct LatencyOnly {
    latency_ms: LatencyMs,
}

impl CommandTarget for RemoteTarget {
    fn command(&self, doc_id: &str, req: &CommandRequest) -> Result<LatencyMs, LatencyError> {
        let url = format!("{}/sessions/{doc_id}/command", self.base);
        let mut resp = self.agent.post(&url).send_json(req).map_err(|e| match e {
            ureq::Error::StatusCode(code) => {
                LatencyError::Command { query_id: doc_id.to_string(), reason: format!("status {code}") }
            }
            other => LatencyError::ServiceUnreachable(other.to_string()),
        })?;
        let body: LatencyOnly = resp
            .body_mut()
            .read_json()
            .map_err(|e| LatencyError::Command { query_id: doc_id.to_string(), reason: e.to_string() })?;
        Ok(body.latency_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyLatency {
    pub total: LatencyStats,
    pub route: LatencyStats,
    pub retrieve: LatencyStats,
    /// Published end-to-end time-to-relevance (mean, sd) in seconds.
    pub reference_ttr_s: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub repetitions: usize,
    pub families: BTreeMap<Family, FamilyLatency>,
}

pub fn reference_ttr(family: Family) -> (f64, f64) {
    match family {
        Family::Temporal => (5.0, 0.5),
        Family::Contextual => (6.0, 1.0),
        Family::Summarization => (6.0, 1.2),
    }
}

impl LatencyReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14} {:>5} {:>10} {:>9} {:>9} {:>12} {:>14}\n",
            "family", "n", "mean_ms", "sd_ms", "p95_ms", "retrieve_ms", "reference_ttr"
        );
        for (family, f) in &self.families {
            out.push_str(&format!(
                "{:<14} {:>5} {:>10.3} {:>9.3} {:>9.3} {:>12.3} {:>14}\n",
                family.as_str(),
                f.total.n,
                f.total.mean_ms,
                f.total.sd_ms,
                f.total.p95_ms,
                f.retrieve.mean_ms,
                format!("{} ± {} s", f.reference_ttr_s.0, f.reference_ttr_s.1),
            ));
        }
        out.push_str(
            "\nreference_ttr: published end-to-end time including speech recognition and human verification; not comparable.\n",
        );
        out
    }
}

/// Runs every case `repetitions` times, sequentially, confirmed so jumps
/// execute. Each case gets its own session.
pub fn measure_latency(
    target: &dyn CommandTarget,
    cases: &[QueryCase],
    repetitions: usize,
) -> Result<LatencyReport, LatencyError> {
    if repetitions == 0 {
        return Err(LatencyError::NoRepetitions);
    }
    if cases.is_empty() {
        return Err(LatencyError::EmptyCorpus);
    }
    let mut samples: BTreeMap<Family, Vec<LatencyMs>> = BTreeMap::new();
    for rep in 0..repetitions {
        for case in cases {
            let req = CommandRequest {
                transcript: case.utterance.clone(),
                confirm: true,
                session_id: Some(format!("latency-{}-{rep}", case.query_id)),
                fusion: None,
            };
            let ms = target.command(&case.doc_id, &req).map_err(|e| match e {
                LatencyError::Command { reason, .. } => LatencyError::Command { query_id: case.query_id.clone(), reason },
                other => other,
            })?;
            samples.entry(case.family).or_default().push(ms);
        }
    }
    let families = samples
        .into_iter()
        .map(|(family, s)| {
            let stats = |f: fn(&LatencyMs) -> f64| {
                LatencyStats::from_samples(&s.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
            };
            let fl = FamilyLatency {
                total: stats(|l| l.total),
                route: stats(|l| l.route),
                retrieve: stats(|l| l.retrieve),
                reference_ttr_s: reference_ttr(family),
            };
            (family, fl)
        })
        .collect();
    Ok(LatencyReport { repetitions, families })
}
