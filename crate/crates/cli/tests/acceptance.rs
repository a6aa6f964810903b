//! Acceptance gate. Prints one PASS/FAIL line per criterion.
//!
//! Failures listed in `KNOWN_FAILURES` are reported but do not fail the
//! target; any other failure exits non-zero. A known failure that starts
//! passing is reported as such so the list can shrink.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anchornav_core::config::AppConfig;
use anchornav_core::dense::{score_maxsim, TokenMatrix};
use anchornav_core::eval::{parse_corpus, Evaluator, Family, Mode, QueryCase};
use anchornav_core::fusion::{fuse, DenseLeg, FusionConfig, LexicalLeg};
use anchornav_core::ingest::{parse_layout, parse_layout_json, AnchorKind, CharRange, DocumentRecord};
use anchornav_core::lexical::{build_lexical, Bm25Params};
use anchornav_core::router::{BackoffClient, BackoffError, BackoffRequest, BackoffResponse, IntentSource, Router};
use anchornav_core::synthetic::{payload_from_texts, random_queries, random_texts, synthetic_payload, SyntheticSpec};
use anchornav_core::tokenize::Tokenizer;
use anchornav_core::{align_fuzzy, AlignError};
use anchornav_server::latency::measure_latency;
use anchornav_server::Navigator;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const KNOWN_FAILURES: &[&str] = &["strict-hit exactness"];

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { name, pass, detail: detail.into() }
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture_docs() -> BTreeMap<String, DocumentRecord> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(root().join("fixtures/docs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let r = parse_layout_json(&std::fs::read_to_string(&p).unwrap()).unwrap();
            (r.doc_id.clone(), r)
        })
        .collect()
}

fn corpus(name: &str) -> Vec<QueryCase> {
    parse_corpus(&std::fs::read_to_string(root().join("fixtures/corpus").join(name)).unwrap()).unwrap()
}

// ---------------------------------------------------------------------------

/// Brute-force BM25: every quantity recounted from the raw term lists.
fn bm25_oracle(docs: &[(AnchorKind, Vec<String>)], query: &[String], p: &Bm25Params) -> Vec<f64> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let mut distinct: Vec<&String> = Vec::new();
    for q in query {
        if !distinct.contains(&q) {
            distinct.push(q);
        }
    }
    docs.iter()
        .map(|(kind, terms)| {
            let mut s = 0.0;
            for q in &distinct {
                let tf = terms.iter().filter(|t| t == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|(_, t)| t.contains(q)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let len = terms.len() as f64;
                s += idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * len / avg));
            }
            let boost = match kind {
                AnchorKind::Heading => p.boosts.heading,
                AnchorKind::TableCell => p.boosts.table_cell,
                AnchorKind::Para => p.boosts.para,
            };
            s * boost
        })
        .collect()
}

fn bm25_equivalence() -> Verdict {
    let t0 = Instant::now();
    let mut payload = payload_from_texts("bm25-oracle", &random_texts(11, 100));
    for (i, span) in payload.spans.iter_mut().enumerate() {
        if i % 9 == 0 {
            span.section_type = AnchorKind::Heading;
        }
    }
    let record = parse_layout(&payload).unwrap();
    let params = Bm25Params::default();
    let index = build_lexical(&record, params).unwrap();
    let tok = Tokenizer::default();
    let docs: Vec<(AnchorKind, Vec<String>)> =
        record.anchors.iter().map(|a| (a.kind, tok.index_terms(record.text(a)))).collect();
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for q in random_queries(12, 20) {
        let expected = bm25_oracle(&docs, &tok.index_terms(&q), &params);
        let mut got = vec![0.0; docs.len()];
        for h in index.score(&q, usize::MAX) {
            got[h.position] = h.score;
        }
        for (g, e) in got.iter().zip(&expected) {
            worst = worst.max((g - e).abs());
            pairs += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        "BM25 oracle equivalence",
        docs.len() == 100 && pairs == 2000 && worst < 1e-9 && secs < 5.0,
        format!("{pairs} pairs, max |d| = {worst:.2e}, {secs:.2} s"),
    )
}

fn maxsim_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = 64;
    let matrix = |rows: usize, rng: &mut ChaCha8Rng| -> TokenMatrix {
        let data: Vec<Vec<f32>> = (0..rows).map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect();
        TokenMatrix::from_rows("m", vec![String::new(); rows], data).unwrap()
    };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (m, n) = (rng.gen_range(1..=10), rng.gen_range(1..=30));
        let q = matrix(m, &mut rng);
        let w = matrix(n, &mut rng);
        let mut oracle = 0.0f64;
        for i in 0..m {
            let mut best = f64::NEG_INFINITY;
            for j in 0..n {
                let mut dot = 0.0f64;
                for k in 0..d {
                    dot += q.row(i)[k] as f64 * w.row(j)[k] as f64;
                }
                if dot > best {
                    best = dot;
                }
            }
            oracle += best;
        }
        worst = worst.max((score_maxsim(&q, &w).unwrap() - oracle).abs());
    }
    verdict("MaxSim oracle equivalence", worst < 1e-9, format!("200 pairs, max |d| = {worst:.2e}"))
}

fn fusion_formula() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let run = |k: f64, v: f64, alpha: f64| -> f64 {
        let cfg = FusionConfig { alpha, ..FusionConfig::default() };
        let lex = [LexicalLeg { position: 0, anchor_id: "a".into(), norm: k }];
        let dense = [DenseLeg { window_id: "w".into(), positions: vec![0], anchor_ids: vec!["a".into()], norm: v }];
        fuse(&lex, &dense, &cfg, |_| CharRange::new(0, 0))[0].fused
    };
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (k, v, alpha): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        if run(k, v, alpha) != alpha * k + (1.0 - alpha) * v {
            mismatches += 1;
        }
    }
    let worked = run(1.0, 0.0, 0.7);
    verdict(
        "fusion formula",
        mismatches == 0 && worked == 0.7,
        format!("1000 triples, {mismatches} mismatches; K=1 V=0 alpha=0.7 -> {worked}"),
    )
}

#[derive(Default)]
struct Counting(AtomicUsize);

impl BackoffClient for Counting {
    fn classify(&self, _: &BackoffRequest) -> Result<BackoffResponse, BackoffError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Err(BackoffError::Unavailable("counting only".into()))
    }
}

fn grammar_routing() -> Verdict {
    let src = std::fs::read_to_string(root().join("fixtures/grammar/utterances.jsonl")).unwrap();
    let counter = Arc::new(Counting::default());
    let router = Router::new(counter.clone());
    let (mut total, mut exact) = (0, 0);
    for line in src.lines().filter(|l| !l.trim().is_empty()) {
        let case: Value = serde_json::from_str(line).unwrap();
        let intent = router.route(case["utterance"].as_str().unwrap());
        total += 1;
        if intent.source == IntentSource::Grammar && serde_json::to_value(&intent.kind).unwrap() == case["intent"] {
            exact += 1;
        }
    }
    let calls = counter.0.load(Ordering::SeqCst);
    verdict(
        "grammar routing",
        total >= 50 && exact == total && calls == 0,
        format!("{exact}/{total} exact, {calls} back-off calls"),
    )
}

fn evaluate(corpus_name: &str) -> anchornav_core::eval::EvalReport {
    let cfg = AppConfig::default();
    let ev = Evaluator::new(fixture_docs().into_values(), cfg.retrieval);
    ev.run(&corpus(corpus_name), &Mode::ALL).unwrap()
}

fn strict_hit_exactness() -> Verdict {
    let cases = corpus("exact-phrase.jsonl");
    let docs: BTreeSet<&str> = cases.iter().map(|c| c.doc_id.as_str()).collect();
    let report = evaluate("exact-phrase.jsonl");
    let per_mode: Vec<String> =
        report.modes.iter().map(|m| format!("{} {:.4}", m.mode.as_str(), m.strict_f1)).collect();
    verdict(
        "strict-hit exactness",
        cases.len() >= 60 && docs.contains("register-tables") && report.modes.iter().all(|m| m.strict_f1 == 1.0),
        format!("{} queries over {} docs; {}", cases.len(), docs.len(), per_mode.join(", ")),
    )
}

fn ablation_ordering() -> Verdict {
    let report = evaluate("paraphrase.jsonl");
    let f1 = |m| report.mode(m).unwrap().strict_f1;
    let (kw, late) = (f1(Mode::KeywordOnly), f1(Mode::LateWindowKeyword));
    let all: Vec<String> = report.modes.iter().map(|m| format!("{} {:.4}", m.mode.as_str(), m.strict_f1)).collect();
    verdict("ablation ordering", kw < late, all.join(", "))
}

fn latency_budget() -> Verdict {
    let spec = SyntheticSpec::default();
    let payload = synthetic_payload(&spec);
    let record = parse_layout(&payload).unwrap();
    let nav = Arc::new(Navigator::local(AppConfig::default()));
    let t0 = Instant::now();
    nav.ingest_json(&serde_json::to_string(&payload).unwrap()).unwrap();
    let ingest_s = t0.elapsed().as_secs_f64();

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let paras: Vec<_> = record.anchors.iter().filter(|a| a.kind == AnchorKind::Para).collect();
    let cases: Vec<QueryCase> = (0..20)
        .map(|i| {
            let a = paras.choose(&mut rng).unwrap();
            let words: Vec<&str> = record.text(a).split_whitespace().collect();
            let n = rng.gen_range(3..=5).min(words.len());
            let start = rng.gen_range(0..=words.len() - n);
            QueryCase {
                query_id: format!("lat-{i}"),
                doc_id: spec.doc_id.clone(),
                family: Family::Contextual,
                utterance: words[start..start + n].join(" "),
                gold_anchor_ids: vec![a.anchor_id.clone()],
            }
        })
        .collect();
    let report = measure_latency(&nav, &cases, 5).unwrap();
    let c = report.families[&Family::Contextual].total;
    verdict(
        "latency budget",
        record.anchors.len() >= 6500 && c.p95_ms <= 500.0,
        format!(
            "{} anchors, {} pages; contextual n={} p95 {:.1} ms, mean {:.1} ms; ingest {ingest_s:.1} s",
            record.anchors.len(),
            record.page_count,
            c.n,
            c.p95_ms,
            c.mean_ms
        ),
    )
}

// ---------------------------------------------------------------------------

struct Service {
    child: Child,
    base: String,
    agent: ureq::Agent,
}

impl Drop for Service {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Service {
    fn start(audit: &Path, docs: &[PathBuf]) -> Service {
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_anchornav"));
        cmd.args(["serve", "--host", "127.0.0.1", "--port", &port.to_string(), "--audit-path"])
            .arg(audit)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .stderr(Stdio::null());
        for d in docs {
            cmd.arg("--preload").arg(d);
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(10)))
            .build()
            .into();
        let svc = Service { child: cmd.spawn().unwrap(), base: format!("http://127.0.0.1:{port}"), agent };
        let deadline = Instant::now() + Duration::from_secs(60);
        while svc.agent.get(format!("{}/healthz", svc.base)).call().is_err() {
            assert!(Instant::now() < deadline, "service did not come up");
            std::thread::sleep(Duration::from_millis(50));
        }
        svc
    }

    fn get(&self, path: &str) -> (u16, String) {
        let mut r = self.agent.get(format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
    }

    fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let mut r = self.agent.post(format!("{}{path}", self.base)).send_json(body).unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap_or(Value::Null))
    }
}

fn referenced_ids(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                match (k.as_str(), x) {
                    ("anchor_id", Value::String(s)) => out.push(s.clone()),
                    ("anchor_ids" | "highlight_ids", Value::Array(a)) => {
                        out.extend(a.iter().filter_map(|s| s.as_str().map(str::to_string)))
                    }
                    _ => referenced_ids(x, out),
                }
            }
        }
        Value::Array(a) => a.iter().for_each(|x| referenced_ids(x, out)),
        _ => {}
    }
}

fn random_command(rng: &mut ChaCha8Rng, vocab: &[String]) -> String {
    const SCOPES: &[&str] = &["document", "charges", "petition", "findings", "prayer", "grounds"];
    const FIXED: &[&str] =
        &["next hit", "previous hit", "previous section", "back", "go back", "toggle highlights", "", "   "];
    let n = rng.gen_range(0..=120u32);
    match rng.gen_range(0..10) {
        0 => format!("go to paragraph {n}"),
        1 => format!("go to page {}", n % 20),
        2 => format!("go to paragraph {} in the {} section", n % 8, SCOPES.choose(rng).unwrap()),
        3 => format!("open {}", n % 7),
        4 => FIXED.choose(rng).unwrap().to_string(),
        5 => format!("summarize the {}", SCOPES.choose(rng).unwrap()),
        6 => format!("table T{} row {} column {}", n % 6, n % 4, n % 3),
        7 => format!("highlight {}", vocab.choose_multiple(rng, 3).cloned().collect::<Vec<_>>().join(" ")),
        _ => {
            let k = rng.gen_range(1..=6);
            vocab.choose_multiple(rng, k).cloned().collect::<Vec<_>>().join(" ")
        }
    }
}

fn grounding_and_audit() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let audit_path = dir.path().join("audit.ndjson");
    let docs = fixture_docs();
    let paths: Vec<PathBuf> = ["judgment-clean", "petition-ocr", "register-tables", "three-paras"]
        .iter()
        .map(|d| root().join(format!("fixtures/docs/{d}.json")))
        .collect();
    let svc = Service::start(&audit_path, &paths);

    let mut known: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut vocab = vec!["xylophone".to_string(), "quantum".into(), "zebra".into()];
    for id in ["judgment-clean", "petition-ocr", "register-tables", "three-paras"] {
        let (_, body) = svc.get(&format!("/documents/{id}/anchors"));
        let v: Value = serde_json::from_str(&body).unwrap();
        let ids = v["anchors"].as_array().unwrap().iter().map(|a| a["anchor_id"].as_str().unwrap().to_string());
        known.insert(id.to_string(), ids.collect());
        let r = &docs[id];
        vocab.extend(r.anchors.iter().flat_map(|a| r.text(a).split_whitespace().map(str::to_lowercase)));
    }
    vocab.sort();
    vocab.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let doc_ids: Vec<&String> = known.keys().collect();
    let (mut executed, mut ungrounded, mut server_errors, mut referenced) = (0usize, 0usize, 0usize, 0usize);
    let mut statuses: BTreeMap<u16, usize> = BTreeMap::new();
    for _ in 0..500 {
        let doc = *doc_ids.choose(&mut rng).unwrap();
        let body = json!({
            "transcript": random_command(&mut rng, &vocab),
            "confirm": rng.gen_bool(0.7),
            "session_id": format!("{doc}-s{}", rng.gen_range(0..3)),
        });
        let (status, resp) = svc.post(&format!("/sessions/{doc}/command"), &body);
        *statuses.entry(status).or_default() += 1;
        if status >= 500 {
            server_errors += 1;
        }
        if status != 200 {
            continue;
        }
        if resp["action"]["type"] != "await_confirm" {
            executed += 1;
        }
        let mut ids = Vec::new();
        referenced_ids(&resp, &mut ids);
        referenced += ids.len();
        ungrounded += ids.iter().filter(|id| !known[doc].contains(*id)).count();
    }

    let allowed: BTreeSet<&str> =
        ["timestamp", "session_id", "doc_id", "intent_kind", "slots", "decision", "anchor_ids"].into();
    let (_, ndjson) = svc.get("/audit");
    let records: Vec<Value> = ndjson.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let on_disk = std::fs::read_to_string(&audit_path).unwrap().lines().count();
    let unstructured = records
        .iter()
        .filter(|r| {
            let obj = r.as_object().unwrap();
            !obj.keys().all(|k| allowed.contains(k.as_str())) || !r["slots"].is_object()
        })
        .count();
    let audit_ungrounded = records
        .iter()
        .flat_map(|r| {
            let doc = r["doc_id"].as_str().unwrap().to_string();
            r["anchor_ids"].as_array().unwrap().iter().map(move |a| (doc.clone(), a.as_str().unwrap().to_string()))
        })
        .filter(|(doc, id)| !known[doc].contains(id))
        .count();

    verdict(
        "grounding and audit",
        ungrounded == 0
            && audit_ungrounded == 0
            && server_errors == 0
            && referenced > 0
            && records.len() == executed
            && on_disk == executed
            && unstructured == 0,
        format!(
            "500 commands {statuses:?}; {referenced} anchor refs, {ungrounded} ungrounded; \
             {executed} executed, {} audited ({on_disk} on disk), {unstructured} unstructured",
            records.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn corrupt(rng: &mut ChaCha8Rng, chars: &[char], rate: f64) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz ";
    let k = ((chars.len() as f64 * rate).floor() as usize).max(1);
    let mut out = chars.to_vec();
    for i in rand::seq::index::sample(rng, chars.len(), k) {
        loop {
            let c = *ALPHABET.choose(rng).unwrap() as char;
            if c != out[i] {
                out[i] = c;
                break;
            }
        }
    }
    out.into_iter().collect()
}

fn alignment_tolerance() -> Verdict {
    let docs = fixture_docs();
    let tolerance = AppConfig::default().retrieval.tolerance;
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut samples: Vec<(&DocumentRecord, String, Vec<char>)> = Vec::new();
    let pool: Vec<&DocumentRecord> = ["judgment-clean", "petition-ocr", "register-tables"].iter().map(|d| &docs[*d]).collect();
    while samples.len() < 100 {
        let r = *pool.choose(&mut rng).unwrap();
        let a = r.anchors.choose(&mut rng).unwrap();
        let chars: Vec<char> = r.text(a).chars().collect();
        if chars.len() < 40 {
            continue;
        }
        let len = rng.gen_range(40..=chars.len().min(90));
        let start = rng.gen_range(0..=chars.len() - len);
        let excerpt: String = chars[start..start + len].iter().collect();
        if r.canonical_text.matches(&excerpt).count() == 1 {
            samples.push((r, a.anchor_id.clone(), excerpt.chars().collect()));
        }
    }
    let mut recovered = 0;
    for (r, id, chars) in &samples {
        let rate = rng.gen_range(0.01..=0.10);
        if align_fuzzy(r, &corrupt(&mut rng, chars, rate), tolerance).is_ok_and(|m| &m.anchor_id == id) {
            recovered += 1;
        }
    }
    let mut heavy = 0;
    let mut rejected = 0;
    for rate in [0.3, 0.5] {
        for (r, _, chars) in &samples {
            heavy += 1;
            if matches!(align_fuzzy(r, &corrupt(&mut rng, chars, rate), tolerance), Err(AlignError::NoAnchor { .. })) {
                rejected += 1;
            }
        }
    }
    verdict(
        "alignment tolerance",
        recovered >= 99 && rejected == heavy,
        format!("tolerance {tolerance}; <=10%: {recovered}/100 recovered; 30%/50%: {rejected}/{heavy} NoAnchor"),
    )
}

fn main() {
    let checks: [fn() -> Verdict; 9] = [
        bm25_equivalence,
        maxsim_equivalence,
        fusion_formula,
        grammar_routing,
        strict_hit_exactness,
        ablation_ordering,
        latency_budget,
        grounding_and_audit,
        alignment_tolerance,
    ];
    let mut unexpected = Vec::new();
    for check in checks {
        let v = check();
        let known = KNOWN_FAILURES.contains(&v.name);
        let tag = match (v.pass, known) {
            (true, false) => "PASS",
            (true, true) => "PASS (listed as known failure)",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag:<6} {:<26} {}", v.name, v.detail);
        if !v.pass && !known {
            unexpected.push(v.name);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
