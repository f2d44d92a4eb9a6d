//! Batch dataset generation with a worker pool and a resumable job ledger.
//!
//! Layout under the output directory:
//!
//! ```text
//! ledger.jsonl          one line per finished job
//! jobs/00042/           per-job result and provenance
//! episodes.jsonl        accepted episodes, job order
//! memory/<episode>.json memory graph of each accepted episode
//! items.jsonl           every item used by an accepted episode
//! provenance.jsonl      every backend call, tagged with its job
//! rejected.jsonl        rejected jobs with their reason
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AgentBackend, Embedder, ProvenanceRecord, RecordingBackend};
use crate::memory::MemoryGraph;
use crate::model::{write_episodes_jsonl, Episode, ItemId, ModalityItem};
use crate::orchestrator::EngineConfig;
use crate::rng::SplitMix64;

use super::catalog::write_items_jsonl;
use super::cluster::{cluster_by_location, ClusterError, DEFAULT_K};
use super::filter::screen_episode;
use super::generate::generate_episode;

/// Items offered to one scenario prompt at most.
pub const MAX_OFFERED: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub out: PathBuf,
    pub episodes: usize,
    pub workers: usize,
    pub seed: u64,
    pub k: usize,
    pub engine: EngineConfig,
}

impl GenConfig {
    pub fn new(out: impl Into<PathBuf>, episodes: usize, seed: u64) -> Self {
        Self { out: out.into(), episodes, workers: 1, seed, k: DEFAULT_K, engine: EngineConfig::default() }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("IO: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("NO_ELIGIBLE_CLUSTER: no location cluster has {need} items")]
    NoEligibleCluster { need: usize },
    #[error("LEDGER: line {line}: {message}")]
    Ledger { line: usize, message: String },
    #[error("JOB_RESULT: job {job}: {message}")]
    JobResult { job: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub job: usize,
    pub episode: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JobResult {
    entry: LedgerEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    episode: Option<Episode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    memory: Option<serde_json::Value>,
    #[serde(default)]
    items: Vec<ModalityItem>,
}

#[derive(Serialize)]
struct JobProvenance<'a> {
    job: usize,
    #[serde(flatten)]
    record: &'a ProvenanceRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSummary {
    pub jobs: usize,
    pub resumed: usize,
    pub accepted: usize,
    pub rejected: usize,
}

pub fn episode_id(job: usize) -> String {
    format!("ep{job:05}")
}

fn job_dir(out: &Path, job: usize) -> PathBuf {
    out.join("jobs").join(format!("{job:05}"))
}

/// Reads the ledger, ignoring a torn final line left by an interrupted run.
pub fn read_ledger(path: &Path) -> Result<Vec<LedgerEntry>, RunError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(e) => out.push(e),
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
            Err(e) => return Err(RunError::Ledger { line: i + 1, message: e.to_string() }),
        }
    }
    Ok(out)
}

fn run_job(
    job: usize,
    offered: &[ModalityItem],
    backend: &Arc<dyn AgentBackend>,
    embedder: &dyn Embedder,
    seed: u64,
    config: &EngineConfig,
) -> (JobResult, Vec<ProvenanceRecord>) {
    let id = episode_id(job);
    let recorder = RecordingBackend::new(Arc::clone(backend));
    let entry = |status, reason| LedgerEntry { job, episode: id.clone(), status, reason };
    let result = match generate_episode(&id, offered, &recorder, embedder, seed, config) {
        Err(e) => JobResult { entry: entry(JobStatus::Rejected, Some(e.code().to_owned())), episode: None, memory: None, items: vec![] },
        Ok((scenario, run)) => match screen_episode(&run.episode, &scenario.item_map(), &recorder) {
            Err(e) => JobResult { entry: entry(JobStatus::Rejected, Some(e.code().to_owned())), episode: None, memory: None, items: vec![] },
            Ok(report) if !report.passed => JobResult {
                entry: entry(JobStatus::Rejected, report.reason()),
                episode: Some(run.episode),
                memory: None,
                items: vec![],
            },
            Ok(_) => JobResult {
                entry: entry(JobStatus::Accepted, None),
                memory: Some(serde_json::from_str(&run.graph.to_json()).expect("graph json")),
                episode: Some(run.episode),
                items: scenario.items,
            },
        },
    };
    (result, recorder.take())
}

fn write_job(out: &Path, result: &JobResult, provenance: &[ProvenanceRecord]) -> Result<(), RunError> {
    let dir = job_dir(out, result.entry.job);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("result.json"), serde_json::to_string_pretty(result).expect("result serialises"))?;
    let mut lines = String::new();
    for record in provenance {
        lines.push_str(&serde_json::to_string(&JobProvenance { job: result.entry.job, record }).expect("record serialises"));
        lines.push('\n');
    }
    fs::write(dir.join("provenance.jsonl"), lines)?;
    Ok(())
}

fn append_ledger(path: &Path, entry: &LedgerEntry) -> Result<(), RunError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(entry).expect("entry serialises"))?;
    f.sync_data()?;
    Ok(())
}

/// Picks the items offered to `job`: a seeded sample of one eligible cluster.
fn offer(clusters: &[Vec<ModalityItem>], seed: u64, job: usize) -> Vec<ModalityItem> {
    let mut rng = SplitMix64::stream(seed, "job", job as u64);
    let mut items = clusters[job % clusters.len()].clone();
    rng.shuffle(&mut items);
    items.truncate(MAX_OFFERED);
    items
}

/// Generates `config.episodes` jobs, skipping any already in the ledger, then
/// rebuilds the aggregate outputs from every finished job.
pub fn run_generation(
    catalog: &[ModalityItem],
    backend: Arc<dyn AgentBackend>,
    embedder: Arc<dyn Embedder>,
    config: &GenConfig,
) -> Result<GenSummary, RunError> {
    let need = 2 * crate::model::SESSIONS_PER_EPISODE;
    let clustering = cluster_by_location(catalog, config.k, config.seed)?;
    let by_id: BTreeMap<&ItemId, &ModalityItem> = catalog.iter().map(|i| (&i.id, i)).collect();
    let eligible: Vec<Vec<ModalityItem>> = clustering
        .clusters
        .iter()
        .filter(|c| c.len() >= need)
        .map(|c| c.iter().map(|id| by_id[id].clone()).collect())
        .collect();
    if eligible.is_empty() {
        return Err(RunError::NoEligibleCluster { need });
    }

    fs::create_dir_all(&config.out)?;
    let ledger_path = config.out.join("ledger.jsonl");
    let done: BTreeSet<usize> = read_ledger(&ledger_path)?.into_iter().map(|e| e.job).collect();
    let pending: Vec<usize> = (0..config.episodes).filter(|j| !done.contains(j)).collect();
    tracing::info!(pending = pending.len(), resumed = done.len(), clusters = eligible.len(), "generation start");

    let next = AtomicUsize::new(0);
    let ledger = Mutex::new(());
    let failure: Mutex<Option<RunError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..config.workers.max(1) {
            scope.spawn(|| loop {
                if failure.lock().expect("failure lock").is_some() {
                    return;
                }
                let Some(&job) = pending.get(next.fetch_add(1, Ordering::SeqCst)) else { return };
                let offered = offer(&eligible, config.seed, job);
                let seed = SplitMix64::stream(config.seed, "episode", job as u64).next_u64();
                let (result, provenance) = run_job(job, &offered, &backend, embedder.as_ref(), seed, &config.engine);
                tracing::info!(job, status = ?result.entry.status, reason = ?result.entry.reason, "job finished");
                let written = write_job(&config.out, &result, &provenance).and_then(|_| {
                    let _guard = ledger.lock().expect("ledger lock");
                    append_ledger(&ledger_path, &result.entry)
                });
                if let Err(e) = written {
                    *failure.lock().expect("failure lock") = Some(e);
                    return;
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }

    let mut summary = assemble(&config.out, config.episodes)?;
    summary.resumed = done.iter().filter(|&&j| j < config.episodes).count();
    Ok(summary)
}

/// Rebuilds aggregate files from `jobs/` for jobs `0..jobs`.
pub fn assemble(out: &Path, jobs: usize) -> Result<GenSummary, RunError> {
    let entries: BTreeMap<usize, LedgerEntry> =
        read_ledger(&out.join("ledger.jsonl"))?.into_iter().map(|e| (e.job, e)).collect();
    let memory_dir = out.join("memory");
    fs::create_dir_all(&memory_dir)?;
    let mut episodes = Vec::new();
    let mut items: BTreeMap<ItemId, ModalityItem> = BTreeMap::new();
    let mut rejected = String::new();
    let mut provenance = String::new();
    let mut summary = GenSummary { jobs, ..GenSummary::default() };
    for job in entries.keys().copied().filter(|&j| j < jobs) {
        let dir = job_dir(out, job);
        let text = fs::read_to_string(dir.join("result.json"))?;
        let result: JobResult =
            serde_json::from_str(&text).map_err(|e| RunError::JobResult { job, message: e.to_string() })?;
        provenance.push_str(&fs::read_to_string(dir.join("provenance.jsonl")).unwrap_or_default());
        match result.entry.status {
            JobStatus::Accepted => {
                let (Some(episode), Some(memory)) = (result.episode, result.memory) else {
                    return Err(RunError::JobResult { job, message: "accepted job without episode".into() });
                };
                let graph = MemoryGraph::from_json(&memory.to_string())
                    .map_err(|e| RunError::JobResult { job, message: e.to_string() })?;
                fs::write(memory_dir.join(format!("{}.json", episode.id)), graph.to_json())?;
                items.extend(result.items.into_iter().map(|i| (i.id.clone(), i)));
                episodes.push(episode);
                summary.accepted += 1;
            }
            JobStatus::Rejected => {
                rejected.push_str(&serde_json::to_string(&result.entry).expect("entry serialises"));
                rejected.push('\n');
                summary.rejected += 1;
            }
        }
    }
    fs::write(out.join("episodes.jsonl"), write_episodes_jsonl(&episodes))?;
    fs::write(out.join("items.jsonl"), write_items_jsonl(&items.into_values().collect::<Vec<_>>()))?;
    fs::write(out.join("rejected.jsonl"), rejected)?;
    fs::write(out.join("provenance.jsonl"), provenance)?;
    Ok(summary)
}
