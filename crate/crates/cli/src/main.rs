use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use m3c_core::backend::{BackendKind, EmbedderKind, RecordingBackend};
use m3c_core::eval::{eval_next_speaker, eval_retrieval, EvalDataset};
use m3c_core::model::write_episodes_jsonl;
use m3c_core::orchestrator::{run_episode, shared_agents};
use m3c_core::pipeline::{annotate_catalog, load_catalog, run_generation, GenConfig, Scenario, DEFAULT_K};
use m3c_server::ServerConfig;

#[derive(Parser)]
#[command(name = "m3c", version, about = "Multi-party, multi-modal conversation engine with episodic memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Scripted,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset from a modality catalog.
    Gen {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Backend for generation and judging; overrides the config file.
        #[arg(long, value_enum)]
        judge: Option<Which>,
        /// Refine image captions before clustering.
        #[arg(long)]
        refine_captions: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluation harness.
    Eval {
        #[command(subcommand)]
        what: EvalCommand,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one scenario end to end with agents only.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Recall@1, Recall@5 and MRR of top-1 retrieval.
    Retrieval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "det")]
        embedder: EmbedderArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Next-speaker accuracy after a six-turn prefix.
    Speaker {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderArg {
    Det,
    Remote,
}

fn config(path: Option<&Path>) -> Result<ServerConfig> {
    match path {
        Some(p) => ServerConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ServerConfig::default()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen(cmd: Command) -> Result<()> {
    let Command::Gen { catalog, out, episodes, seed, workers, k, judge, refine_captions, config: cfg } = cmd else {
        unreachable!()
    };
    let mut cfg = config(cfg.as_deref())?;
    match judge {
        Some(Which::Scripted) => cfg.backend.kind = BackendKind::Scripted,
        Some(Which::Remote) => cfg.backend.kind = BackendKind::Remote,
        None => {}
    }
    let mut items = load_catalog(&catalog).with_context(|| format!("reading {}", catalog.display()))?;
    let backend = cfg.backend.agent(seed)?;
    let embedder = cfg.backend.embedder()?;
    fs::create_dir_all(&out)?;

    let needs_tags = items.iter().any(|i| i.location_tag.is_none());
    if needs_tags || refine_captions {
        let recorder = RecordingBackend::new(Arc::clone(&backend));
        annotate_catalog(&mut items, &recorder, refine_captions)?;
        let lines: String = recorder.take().iter().map(|r| format!("{}\n", serde_json::to_string(r).expect("record"))).collect();
        fs::write(out.join("annotation_provenance.jsonl"), lines)?;
        eprintln!("annotated {} catalog items", items.len());
    }

    let config = GenConfig { workers: workers.max(1), k, engine: cfg.engine, ..GenConfig::new(&out, episodes, seed) };
    let summary = run_generation(&items, backend, embedder, &config)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Retrieval { data, embedder, out, config: cfg } => {
            let mut cfg = config(cfg.as_deref())?;
            cfg.backend.embedder = match embedder {
                EmbedderArg::Det => EmbedderKind::Det,
                EmbedderArg::Remote => EmbedderKind::Remote,
            };
            let dataset = EvalDataset::load(&data)?;
            let report = eval_retrieval(&dataset, cfg.backend.embedder()?.as_ref())?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(out) = out {
                write_text(&out, &json)?;
            }
            println!("{json}");
        }
        EvalCommand::Speaker { data, n, seed, config: cfg } => {
            let cfg = config(cfg.as_deref())?;
            let dataset = EvalDataset::load(&data)?;
            let report = eval_next_speaker(&dataset, cfg.backend.agent(seed)?, n, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn run(scenario: &Path, seed: u64, out: &Path, cfg: Option<&Path>) -> Result<()> {
    let cfg = config(cfg)?;
    let text = fs::read_to_string(scenario).with_context(|| format!("reading {}", scenario.display()))?;
    let scenario: Scenario = serde_json::from_str(&text).context("parsing scenario")?;
    let backend = cfg.backend.agent(seed)?;
    let embedder = cfg.backend.embedder()?;
    let agents = shared_agents(&scenario.speakers, Arc::clone(&backend));
    let (run, failure) = match run_episode(&scenario, &agents, backend.as_ref(), embedder.as_ref(), seed, &cfg.engine) {
        Ok(run) => (run, None),
        Err(aborted) => (aborted.partial, Some(aborted.error)),
    };
    fs::create_dir_all(out.join("memory"))?;
    fs::write(out.join("episodes.jsonl"), write_episodes_jsonl([&run.episode]))?;
    fs::write(out.join("memory").join(format!("{}.json", run.episode.id)), run.graph.to_json())?;
    if let Some(e) = failure {
        bail!("episode aborted after {} sessions: {e}", run.episode.sessions.len());
    }
    println!("{} sessions, {} memories written to {}", run.episode.sessions.len(), run.graph.len(), out.display());
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        cmd @ Command::Gen { .. } => gen(cmd),
        Command::Eval { what } => eval(what),
        Command::Serve { port, config: cfg } => Ok(m3c_server::serve(config(cfg.as_deref())?, port)?),
        Command::Run { scenario, seed, out, config } => run(&scenario, seed, &out, config.as_deref()),
    }
}
