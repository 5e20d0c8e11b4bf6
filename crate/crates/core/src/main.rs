use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use tracing_subscriber::EnvFilter;

use urag::batcher::BatchedSearch;
use urag::config::AppConfig;
use urag::engine::{Engine, Providers};
use urag::eval::{accuracy, mrr, Judgment, RankedResult, SweepOutcome, TierReport};
use urag::pipeline;
use urag::service::{self, AppState};
use urag::store::{self, Header, Store, RECORDS_SCHEMA};

#[derive(Parser)]
#[command(name = "urag", version, about = "Two-tier FAQ and document question answering")]
struct Cli {
    /// Configuration file (TOML). Defaults to <store-dir>/urag.toml when present.
    #[arg(long, global = true, env = "URAG_CONFIG")]
    config: Option<PathBuf>,

    #[arg(long, global = true, env = "URAG_STORE_DIR", default_value = "store")]
    store_dir: PathBuf,

    /// Port for `serve`.
    #[arg(long, global = true)]
    port: Option<u16>,

    /// Use the deterministic offline providers.
    #[arg(long, global = true)]
    mock_providers: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load documents (.md, .txt) and an optional seed FAQ file into the store.
    Ingest {
        docs_dir: PathBuf,
        /// JSON lines of {"question", "answer", "id"?}.
        #[arg(long)]
        faq: Option<PathBuf>,
    },
    /// Chunk, rewrite, summarise and embed the stored documents.
    Augment,
    /// Build the enriched FAQ set from the seed FAQ and the chunks.
    Enrich,
    /// Sweep both thresholds and write the best values to the configuration.
    Tune {
        #[arg(long)]
        json: bool,
    },
    /// Accuracy (and per-tier counts when judgments carry a tier).
    Eval {
        judgments: PathBuf,
        /// Ranked results for mean reciprocal rank.
        #[arg(long)]
        ranks: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Answer one question.
    Ask {
        #[arg(required = true)]
        question: Vec<String>,
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service.
    Serve,
}

fn config_path(cli: &Cli) -> PathBuf {
    cli.config.clone().unwrap_or_else(|| cli.store_dir.join("urag.toml"))
}

fn load_config(cli: &Cli) -> Result<AppConfig> {
    let path = config_path(cli);
    let explicit = cli.config.is_some();
    let config = if explicit || path.exists() { AppConfig::load(Some(&path))? } else { AppConfig::default() };
    config.validate()?;
    Ok(config)
}

/// Reads record files with or without a store header line.
fn read_any<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().unwrap_or("");
    let headed = serde_json::from_str::<Header>(first).is_ok_and(|h| h.schema == RECORDS_SCHEMA);
    Ok(if headed { store::load_records(path)? } else { store::read_json_lines(path)? })
}

fn print_curve(name: &str, o: &SweepOutcome) {
    println!("{name} threshold sweep (k = {}):", o.top_k);
    for p in &o.curve {
        let mark = if p.threshold == o.best_t { "  <- best" } else { "" };
        println!("  t = {:.2}  MRR = {:.4}{mark}", p.threshold, p.mrr);
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("URAG_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let store = Store::new(&cli.store_dir);

    match &cli.command {
        Command::Ingest { docs_dir, faq } => {
            let r = pipeline::ingest(&store, docs_dir, faq.as_deref())?;
            println!("ingested {} documents, {} seed FAQ entries into {}", r.documents, r.seed_faq, store);
        }
        Command::Augment => {
            let config = load_config(&cli)?;
            let providers = Providers::from_config(&config, cli.mock_providers);
            let r = pipeline::augment(&store, &config, &providers)?;
            println!("augmented {} documents into {} chunks", r.documents, r.chunks);
        }
        Command::Enrich => {
            let config = load_config(&cli)?;
            let providers = Providers::from_config(&config, cli.mock_providers);
            let s = pipeline::enrich(&store, &config, &providers)?;
            println!(
                "faq entries: {} (seed {}, expanded {}, from chunks {}, paraphrases {}, duplicates dropped {})",
                s.total, s.seed, s.expanded, s.from_chunks, s.paraphrases, s.duplicates_dropped
            );
        }
        Command::Tune { json } => {
            let config = load_config(&cli)?;
            let providers = Providers::from_config(&config, cli.mock_providers);
            let (tuned, report) = pipeline::tune(&store, &config, &providers)?;
            let path = config_path(&cli);
            tuned.save(&path)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                if let Some(o) = &report.faq {
                    print_curve("faq", o);
                }
                if let Some(o) = &report.doc {
                    print_curve("document", o);
                }
                println!(
                    "t_faq = {:.2}, t_doc = {:.2} ({} faq queries, {} document queries) written to {}",
                    tuned.router.t_faq,
                    tuned.router.t_doc,
                    report.faq_queries,
                    report.doc_queries,
                    path.display()
                );
            }
        }
        Command::Eval { judgments, ranks, json } => {
            let js: Vec<Judgment> = read_any(judgments)?;
            let acc = accuracy(&js)?;
            let tiers = js.iter().all(|j| j.tier.is_some()).then(|| TierReport::from_tagged(&js)).transpose()?;
            let m = match ranks {
                Some(p) => Some(mrr(&read_any::<RankedResult>(p)?)?),
                None => None,
            };
            if *json {
                let out = serde_json::json!({
                    "questions": js.len(),
                    "correct": js.iter().filter(|j| j.correct).count(),
                    "accuracy": acc,
                    "mrr": m,
                    "tiers": tiers,
                });
                println!("{}", serde_json::to_string_pretty(&out)?);
            } else {
                println!("questions: {}", js.len());
                println!("accuracy:  {acc:.3}");
                if let Some(m) = m {
                    println!("mrr:       {m:.4}");
                }
                if let Some(t) = tiers {
                    print!("\n{}", t.table());
                }
            }
        }
        Command::Ask { question, json } => {
            let config = load_config(&cli)?;
            let providers = Providers::from_config(&config, cli.mock_providers);
            let engine = Engine::open(config, store, providers)?;
            let env = engine.answer(&question.join(" "))?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&env)?);
            } else {
                println!("[{}] {}", env.tier, env.answer_text);
            }
        }
        Command::Serve => {
            let config = load_config(&cli)?;
            let port = cli.port.unwrap_or(config.service.port);
            let addr: SocketAddr = format!("{}:{port}", config.service.bind)
                .parse()
                .with_context(|| format!("bad bind address {}", config.service.bind))?;
            // Blocking HTTP clients must be built outside the async runtime.
            let providers = Providers::from_config(&config, cli.mock_providers);
            if !providers.available() {
                tracing::warn!("no embedding provider configured; /v1/chat will answer 503");
            }
            let batch = config.service.max_batch;
            let engine = Engine::open(config, store, providers)?.with_search(Arc::new(BatchedSearch::new(batch)));
            let state = AppState::new(Arc::new(engine));
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(service::serve(state, addr))?;
        }
    }
    Ok(())
}
