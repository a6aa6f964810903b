use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anchornav_core::config::AppConfig;
use anchornav_core::eval::{parse_corpus, Evaluator, Mode, QueryCase};
use anchornav_core::ingest::{parse_layout_json, DocumentRecord};
use anchornav_core::lexical::build_lexical;
use anchornav_core::router::{BackoffClient, Grammar, Router};
use anchornav_core::DocumentIndex;
use anchornav_server::clients::HttpBackoff;
use anchornav_server::latency::{measure_latency, RemoteTarget};
use anchornav_server::Navigator;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "anchornav", version, about = "Voice-command navigation over layout-anchored legal documents")]
struct Cli {
    /// TOML config file; `ANCHORNAV_*` variables and flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Run the loopback back-off stub on its own port.
    BackoffStub {
        #[arg(long, default_value = "127.0.0.1:8751")]
        addr: SocketAddr,
    },
    /// Parse one utterance and print the intent.
    Route {
        utterance: String,
        #[arg(long)]
        backoff_url: Option<String>,
    },
    /// Validate a layout payload and print its anchors.
    Ingest {
        payload: PathBuf,
        /// Also write the lexical index sidecar here.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Print the full anchor list as JSON instead of one line per anchor.
        #[arg(long)]
        json: bool,
    },
    /// Print a stored synopsis as JSON.
    Synopsis {
        doc_id: String,
        #[arg(long, default_value = "document")]
        scope: String,
        #[command(flatten)]
        docs: DocsArg,
    },
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args)]
struct DocsArg {
    /// Directory of layout payloads.
    #[arg(long, default_value = "fixtures/docs")]
    docs: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    audit_path: Option<PathBuf>,
    #[arg(long)]
    backoff_url: Option<String>,
    #[arg(long)]
    embedding_url: Option<String>,
    #[arg(long)]
    confirm_all: bool,
    /// Layout payloads to load before accepting requests.
    #[arg(long = "preload")]
    preload: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Strict-hit F1 per retrieval mode.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated modes, or `all`.
        #[arg(long, default_value = "all")]
        modes: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score queries concurrently; latency columns become meaningless.
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        docs: DocsArg,
    },
    /// Server-side latency per query family.
    Latency {
        #[arg(long)]
        corpus: PathBuf,
        /// Running service; omitted means an in-process one.
        #[arg(long)]
        url: Option<String>,
        #[arg(long, default_value_t = 20)]
        repetitions: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        docs: DocsArg,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = AppConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Serve(args) => serve(cfg, args),
        Command::BackoffStub { addr } => {
            init_tracing();
            runtime()?.block_on(anchornav_server::stub::serve_stub(addr))?;
            Ok(())
        }
        Command::Route { utterance, backoff_url } => {
            let router = router(&cfg, backoff_url.or(cfg.router.backoff_url.clone()))?;
            println!("{}", serde_json::to_string_pretty(&router.route(&utterance))?);
            Ok(())
        }
        Command::Ingest { payload, sidecar, json } => ingest(&cfg, &payload, sidecar.as_deref(), json),
        Command::Synopsis { doc_id, scope, docs } => {
            let record = load_docs(&docs.docs)?
                .remove(&doc_id)
                .with_context(|| format!("no payload for {doc_id:?} in {}", docs.docs.display()))?;
            let index = DocumentIndex::build(record, &cfg.retrieval, provider(&cfg), &cfg.scopes()?, now())?;
            let syn = index.synopsis(&scope).with_context(|| format!("unknown scope {scope:?}"))?;
            println!("{}", serde_json::to_string_pretty(syn)?);
            Ok(())
        }
        Command::Eval(cmd) => eval(cfg, cmd),
    }
}

fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    tracing_subscriber::fmt().with_env_filter(filter).init();
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn provider(cfg: &AppConfig) -> Arc<dyn anchornav_core::EmbeddingProvider> {
    let e = &cfg.embedding;
    match &e.provider_url {
        Some(url) => Arc::new(anchornav_server::clients::HttpEmbeddingProvider::new(url, e.dim, Duration::from_millis(e.timeout_ms))),
        None => Arc::new(anchornav_core::HashedTrigramProvider::new(e.dim, e.seed)),
    }
}

fn router(cfg: &AppConfig, backoff_url: Option<String>) -> Result<Router> {
    let mut router = match backoff_url {
        Some(url) => {
            let client: Arc<dyn BackoffClient> = Arc::new(HttpBackoff::new(&url, Duration::from_millis(cfg.router.deadline_ms)));
            Router::new(client)
        }
        None => Router::stub(),
    };
    router.threshold = cfg.router.threshold;
    router.grammar = Grammar::with_scopes(cfg.scopes()?.names().map(str::to_string));
    Ok(router)
}

fn load_docs(dir: &Path) -> Result<BTreeMap<String, DocumentRecord>> {
    let mut out = BTreeMap::new();
    let paths = docs_paths(dir)?;
    for p in paths {
        let src = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let record = parse_layout_json(&src).with_context(|| format!("parsing {}", p.display()))?;
        if out.contains_key(&record.doc_id) {
            bail!("duplicate doc_id {:?} in {}", record.doc_id, p.display());
        }
        out.insert(record.doc_id.clone(), record);
    }
    Ok(out)
}

fn read_corpus(path: &Path) -> Result<Vec<QueryCase>> {
    let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_corpus(&src)?)
}

fn write_or_print(out: Option<&Path>, json: &str, table: &str) -> Result<()> {
    if let Some(path) = out {
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{table}");
    Ok(())
}

fn serve(mut cfg: AppConfig, args: ServeArgs) -> Result<()> {
    init_tracing();
    if let Some(h) = args.host {
        cfg.server.host = h;
    }
    if let Some(p) = args.port {
        cfg.server.port = p;
    }
    if let Some(p) = args.audit_path {
        cfg.server.audit_path = p;
    }
    if args.backoff_url.is_some() {
        cfg.router.backoff_url = args.backoff_url;
    }
    if args.embedding_url.is_some() {
        cfg.embedding.provider_url = args.embedding_url;
    }
    cfg.server.confirm_all |= args.confirm_all;
    cfg.validate()?;
    let addr: SocketAddr = format!("{}:{}", cfg.server.host, cfg.server.port).parse().context("listen address")?;
    let nav = Arc::new(Navigator::from_config(cfg)?);
    for p in &args.preload {
        let src = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let s = nav.ingest_json(&src).with_context(|| format!("loading {}", p.display()))?;
        tracing::info!(doc_id = %s.doc_id, anchors = s.anchor_count, "loaded");
    }
    runtime()?.block_on(anchornav_server::http::serve(nav, addr))?;
    Ok(())
}

fn ingest(cfg: &AppConfig, payload: &Path, sidecar: Option<&Path>, json: bool) -> Result<()> {
    let src = std::fs::read_to_string(payload).with_context(|| format!("reading {}", payload.display()))?;
    let record = parse_layout_json(&src)?;
    if json {
        let anchors: Vec<serde_json::Value> = record
            .anchors
            .iter()
            .map(|a| {
                let mut v = serde_json::to_value(a).expect("anchor serializes");
                v["text"] = record.text(a).into();
                v
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&anchors)?);
    } else {
        for a in &record.anchors {
            let text: String = record.text(a).chars().take(60).collect();
            println!("{}\t{}\tp{}\t{}", a.anchor_id, a.kind.as_str(), a.page(), text);
        }
    }
    if let Some(path) = sidecar {
        let index = build_lexical(&record, cfg.retrieval.bm25)?;
        std::fs::write(path, index.to_sidecar_json(&record.doc_id))?;
    }
    eprintln!("{}: {} anchors, {} pages", record.doc_id, record.anchors.len(), record.page_count);
    Ok(())
}

fn eval(cfg: AppConfig, cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Run { corpus, modes, out, parallel, docs } => {
            let modes: Vec<Mode> = Mode::parse_list(&modes)?;
            let cases = read_corpus(&corpus)?;
            let mut ev = Evaluator::new(load_docs(&docs.docs)?.into_values(), cfg.retrieval.clone());
            ev.router = router(&cfg, cfg.router.backoff_url.clone())?;
            ev.provider = provider(&cfg);
            ev.scopes = cfg.scopes()?;
            ev.parallel = parallel;
            let report = ev.run(&cases, &modes)?;
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&report)?, &report.to_table())
        }
        EvalCommand::Latency { corpus, url, repetitions, out, docs } => {
            let cases = read_corpus(&corpus)?;
            let report = match url {
                Some(url) => {
                    let remote = RemoteTarget::new(&url, Duration::from_secs(30));
                    remote.health()?;
                    for p in docs_paths(&docs.docs)? {
                        remote.upload(&std::fs::read_to_string(&p)?)?;
                    }
                    measure_latency(&remote, &cases, repetitions)?
                }
                None => {
                    let nav = Arc::new(Navigator::local(cfg));
                    for p in docs_paths(&docs.docs)? {
                        nav.ingest_json(&std::fs::read_to_string(&p)?)?;
                    }
                    measure_latency(&nav, &cases, repetitions)?
                }
            };
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&report)?, &report.to_table())
        }
    }
}

fn docs_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    Ok(v)
}
