//! Retrieval metrics and next-speaker accuracy over episode datasets.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AgentBackend, BackendError, Embedder};
use crate::memory::{MemoryError, MemoryGraph, MemoryKind};
use crate::model::{read_episodes_jsonl, Episode, ItemId, MemoryId, ModalityItem, SpeakerProfile};
use crate::orchestrator::{predict_next_speaker, shared_agents, EngineError};
use crate::pipeline::{parse_catalog_jsonl, CatalogError};
use crate::retrieval::{rank, ContextEncoding, RetrievalError};
use crate::rng::SplitMix64;

/// Turns of dialogue shown before asking who speaks next.
pub const SPEAKER_PREFIX: usize = 6;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("EMPTY_CASES")]
    EmptyCases,
    #[error("BAD_RANK: ranks are 1-based, got {0}")]
    BadRank(usize),
    #[error("BAD_K: k must be at least 1")]
    BadK,
    #[error("MISSING_GOLD: no turn carries a memory reference")]
    MissingGold,
    #[error("DANGLING_GOLD: episode {episode} references unknown memory {memory}")]
    DanglingGold { episode: String, memory: MemoryId },
    #[error("MISSING_GRAPH: no memory graph for episode {0}")]
    MissingGraph(String),
    #[error("INSUFFICIENT_TURNS: no session has more than {SPEAKER_PREFIX} turns")]
    InsufficientTurns,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("LOAD: {0}")]
    Load(String),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::EmptyCases => "EMPTY_CASES",
            EvalError::BadRank(_) => "BAD_RANK",
            EvalError::BadK => "BAD_K",
            EvalError::MissingGold => "MISSING_GOLD",
            EvalError::DanglingGold { .. } => "DANGLING_GOLD",
            EvalError::MissingGraph(_) => "MISSING_GRAPH",
            EvalError::InsufficientTurns => "INSUFFICIENT_TURNS",
            EvalError::Backend(e) => e.code(),
            EvalError::Retrieval(_) => "DIM_MISMATCH",
            EvalError::Engine(e) => e.code(),
            EvalError::Load(_) => "LOAD",
        }
    }
}

fn check_ranks(ranks: &[usize]) -> Result<(), EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyCases);
    }
    match ranks.iter().find(|&&r| r == 0) {
        Some(&r) => Err(EvalError::BadRank(r)),
        None => Ok(()),
    }
}

/// Fraction of 1-based ranks that are at most `k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::BadK);
    }
    check_ranks(ranks)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

pub fn mean_reciprocal_rank(ranks: &[usize]) -> Result<f64, EvalError> {
    check_ranks(ranks)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KindMetrics {
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub mrr: f64,
    pub n_cases: usize,
}

impl KindMetrics {
    /// Zeroes for an empty rank list.
    pub fn from_ranks(ranks: &[usize]) -> Result<Self, EvalError> {
        if ranks.is_empty() {
            return Ok(Self::default());
        }
        Ok(Self {
            r_at_1: recall_at_k(ranks, 1)?,
            r_at_5: recall_at_k(ranks, 5)?,
            mrr: mean_reciprocal_rank(ranks)?,
            n_cases: ranks.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ByKind {
    pub image: KindMetrics,
    pub audio: KindMetrics,
    pub text: KindMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub mrr: f64,
    pub n_cases: usize,
    pub by_kind: ByKind,
}

impl MetricsReport {
    pub fn is_well_formed(&self) -> bool {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        [self.by_kind.image, self.by_kind.audio, self.by_kind.text, self.overall()]
            .iter()
            .all(|m| unit(m.r_at_1) && unit(m.r_at_5) && unit(m.mrr) && m.r_at_1 <= m.r_at_5)
    }

    fn overall(&self) -> KindMetrics {
        KindMetrics { r_at_1: self.r_at_1, r_at_5: self.r_at_5, mrr: self.mrr, n_cases: self.n_cases }
    }
}

/// Episodes with their memory graphs and the items they mention.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalDataset {
    pub episodes: Vec<Episode>,
    pub graphs: BTreeMap<String, MemoryGraph>,
    pub items: BTreeMap<ItemId, ModalityItem>,
}

impl EvalDataset {
    /// Reads a generation output directory (`episodes.jsonl`, `items.jsonl`,
    /// `memory/<episode>.json`) or a bare episodes file. Graphs and items are
    /// optional when loading a bare file.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let load = |e: &dyn std::fmt::Display| EvalError::Load(e.to_string());
        let (episodes_path, root) = if path.is_dir() {
            (path.join("episodes.jsonl"), path.to_path_buf())
        } else {
            (path.to_path_buf(), path.parent().map(Path::to_path_buf).unwrap_or_default())
        };
        let text = std::fs::read_to_string(&episodes_path).map_err(|e| load(&e))?;
        let episodes = read_episodes_jsonl(&text).map_err(|e| load(&e))?;
        let mut graphs = BTreeMap::new();
        for ep in &episodes {
            let file = root.join("memory").join(format!("{}.json", ep.id));
            if let Ok(text) = std::fs::read_to_string(&file) {
                let graph = MemoryGraph::from_json(&text).map_err(|e: MemoryError| load(&e))?;
                graphs.insert(ep.id.clone(), graph);
            }
        }
        let items = match std::fs::read_to_string(root.join("items.jsonl")) {
            Ok(text) => parse_catalog_jsonl(&text).map_err(|e: CatalogError| load(&e))?,
            Err(_) => Vec::new(),
        };
        Ok(Self { episodes, graphs, items: items.into_iter().map(|i| (i.id.clone(), i)).collect() })
    }
}

/// One labelled turn: where it sits and the 1-based rank of its gold memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub episode: String,
    pub session: usize,
    pub turn: usize,
    pub gold: MemoryId,
    pub kind: MemoryKind,
    pub rank: usize,
    pub candidates: usize,
}

/// Scores every turn whose first memory reference is the gold label.
/// Candidates are the gold owner's memories of the gold kind written before
/// the turn's session.
pub fn retrieval_cases(dataset: &EvalDataset, embedder: &dyn Embedder) -> Result<Vec<CaseResult>, EvalError> {
    let mut out = Vec::new();
    for ep in &dataset.episodes {
        let labelled = ep.sessions.iter().any(|s| s.turns.iter().any(|t| !t.memory_refs.is_empty()));
        if !labelled {
            continue;
        }
        let graph = dataset.graphs.get(&ep.id).ok_or_else(|| EvalError::MissingGraph(ep.id.clone()))?;
        for s in &ep.sessions {
            for (t, turn) in s.turns.iter().enumerate() {
                let Some(&gold) = turn.memory_refs.first() else { continue };
                let unit = graph
                    .get(gold)
                    .ok_or_else(|| EvalError::DanglingGold { episode: ep.id.clone(), memory: gold })?;
                let perceived: Vec<&ModalityItem> = s.turns[..=t]
                    .iter()
                    .filter_map(|x| x.introduces.as_ref())
                    .filter_map(|id| dataset.items.get(id))
                    .collect();
                let context = ContextEncoding::encode(embedder, &s.turns[..t], &perceived)?;
                let candidates = graph
                    .store(&unit.owner, unit.kind)
                    .filter(|u| u.session_of_origin < s.index || u.id == gold)
                    .map(|u| (u.id, graph.embedding(u.id).expect("every unit has an embedding")));
                let ranking = rank(&context, candidates)?;
                let position = ranking.iter().position(|(id, _)| *id == gold).expect("gold is a candidate");
                out.push(CaseResult {
                    episode: ep.id.clone(),
                    session: s.index,
                    turn: t,
                    gold,
                    kind: unit.kind,
                    rank: position + 1,
                    candidates: ranking.len(),
                });
            }
        }
    }
    if out.is_empty() {
        return Err(EvalError::MissingGold);
    }
    Ok(out)
}

pub fn report_from_cases(cases: &[CaseResult]) -> Result<MetricsReport, EvalError> {
    let ranks_of = |kind: Option<MemoryKind>| -> Vec<usize> {
        cases.iter().filter(|c| kind.is_none_or(|k| c.kind == k)).map(|c| c.rank).collect()
    };
    let all = KindMetrics::from_ranks(&ranks_of(None))?;
    if all.n_cases == 0 {
        return Err(EvalError::MissingGold);
    }
    Ok(MetricsReport {
        r_at_1: all.r_at_1,
        r_at_5: all.r_at_5,
        mrr: all.mrr,
        n_cases: all.n_cases,
        by_kind: ByKind {
            image: KindMetrics::from_ranks(&ranks_of(Some(MemoryKind::Image)))?,
            audio: KindMetrics::from_ranks(&ranks_of(Some(MemoryKind::Audio)))?,
            text: KindMetrics::from_ranks(&ranks_of(Some(MemoryKind::Text)))?,
        },
    })
}

pub fn eval_retrieval(dataset: &EvalDataset, embedder: &dyn Embedder) -> Result<MetricsReport, EvalError> {
    report_from_cases(&retrieval_cases(dataset, embedder)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerReport {
    pub accuracy: f64,
    pub samples: usize,
    pub correct: usize,
    /// Draws that landed on a session too short to have a seventh turn.
    pub skipped: usize,
}

/// Draws `n_samples` sessions with replacement. Each draw shows the first six
/// turns to every participant's backend and checks the arbitrated winner
/// against the speaker of the seventh turn.
pub fn eval_next_speaker(
    dataset: &EvalDataset,
    backend: Arc<dyn AgentBackend>,
    n_samples: usize,
    seed: u64,
) -> Result<SpeakerReport, EvalError> {
    let sessions: Vec<(&Episode, usize)> = dataset
        .episodes
        .iter()
        .flat_map(|ep| (0..ep.sessions.len()).map(move |i| (ep, i)))
        .collect();
    if !sessions.iter().any(|(ep, i)| ep.sessions[*i].turns.len() > SPEAKER_PREFIX) {
        return Err(EvalError::InsufficientTurns);
    }
    let mut rng = SplitMix64::stream(seed, "next_speaker", 0);
    let mut report = SpeakerReport { accuracy: 0.0, samples: 0, correct: 0, skipped: 0 };
    for sample in 0..n_samples {
        let (ep, i) = sessions[rng.below(sessions.len() as u64) as usize];
        let session = &ep.sessions[i];
        if session.turns.len() <= SPEAKER_PREFIX {
            report.skipped += 1;
            continue;
        }
        let participants: Vec<SpeakerProfile> = session
            .participants()
            .into_iter()
            .filter_map(|id| ep.speaker(id).cloned())
            .collect();
        let agents = shared_agents(&participants, Arc::clone(&backend));
        let predicted = predict_next_speaker(
            &session.turns[..SPEAKER_PREFIX],
            &participants,
            &agents,
            &dataset.items,
            session.index,
            sample as u64,
        )?;
        report.samples += 1;
        if predicted == session.turns[SPEAKER_PREFIX].speaker {
            report.correct += 1;
        }
    }
    if report.samples == 0 {
        return Err(EvalError::InsufficientTurns);
    }
    report.accuracy = report.correct as f64 / report.samples as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Completion, CompletionRequest, DeterministicEmbedder, ScriptedBackend, TurnBid, TurnContext};
    use crate::memory::{About, MemoryDraft};
    use crate::model::{fixtures, EmbeddingVector, SpeakerId};
    use proptest::prelude::*;

    #[test]
    fn hand_computed_metrics() {
        let ranks = [1, 3, 7];
        assert!((recall_at_k(&ranks, 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((recall_at_k(&ranks, 5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((mean_reciprocal_rank(&ranks).unwrap() - 0.492063492063492).abs() < 1e-9);
        assert_eq!(recall_at_k(&[1, 1, 1], 3).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[2], 1).unwrap(), 0.0);
        assert_eq!(mean_reciprocal_rank(&[1, 1]).unwrap(), 1.0);
        assert_eq!(mean_reciprocal_rank(&[4]).unwrap(), 0.25);
    }

    #[test]
    fn metric_errors() {
        assert_eq!(recall_at_k(&[], 1).unwrap_err().code(), "EMPTY_CASES");
        assert_eq!(mean_reciprocal_rank(&[]).unwrap_err().code(), "EMPTY_CASES");
        assert_eq!(recall_at_k(&[0], 1).unwrap_err().code(), "BAD_RANK");
        assert_eq!(recall_at_k(&[1], 0).unwrap_err().code(), "BAD_K");
    }

    proptest! {
        #[test]
        fn recall_monotone_and_mrr_bounded(ranks in proptest::collection::vec(1usize..50, 1..40)) {
            let mut prev = 0.0;
            for k in 1..=50 {
                let r = recall_at_k(&ranks, k).unwrap();
                prop_assert!(r >= prev);
                prev = r;
            }
            prop_assert_eq!(prev, 1.0);
            let mrr = mean_reciprocal_rank(&ranks).unwrap();
            prop_assert!(mrr > 0.0 && mrr <= 1.0);
            let mut rev = ranks.clone();
            rev.reverse();
            prop_assert!((mean_reciprocal_rank(&rev).unwrap() - mrr).abs() < 1e-12);
        }
    }

    /// Fixture episode whose session-1 turn 2 recalls one of two session-0
    /// image memories held by the main speaker.
    fn dataset(gold_vec: &[f64], distractor_vec: &[f64], context_text: &str) -> (EvalDataset, MemoryId) {
        let mut ep = fixtures::episode();
        let main = ep.main_speaker.clone();
        let mut graph = MemoryGraph::new();
        let embed = |v: &[f64]| EmbeddingVector::new(v.to_vec()).unwrap();
        let img = |item: &str| MemoryDraft::modality(main.clone(), 0, crate::model::ModalityKind::Image, ItemId::new(item), "x");
        let gold = graph.insert(img("g"), embed(gold_vec)).unwrap();
        graph.insert(img("d"), embed(distractor_vec)).unwrap();
        graph.insert(MemoryDraft::text(main.clone(), 0, "later", About::Myself), embed(gold_vec)).unwrap();
        for t in &mut ep.sessions[1].turns {
            t.text = context_text.into();
            t.introduces = None;
        }
        ep.sessions[1].turns[2].memory_refs = vec![gold];
        let mut ds = EvalDataset::default();
        ds.graphs.insert(ep.id.clone(), graph);
        ds.episodes.push(ep);
        (ds, gold)
    }

    #[test]
    fn gold_equal_to_context_ranks_first() {
        let e = DeterministicEmbedder::new(8);
        let ctx = e.embed_text("wind\nwind\n").unwrap();
        let (ds, gold) = dataset(ctx.values(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], "wind");
        let cases = retrieval_cases(&ds, &e).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!((cases[0].gold, cases[0].rank, cases[0].candidates), (gold, 1, 2));
        let report = eval_retrieval(&ds, &e).unwrap();
        assert_eq!(report.r_at_1, 1.0);
        assert_eq!(report.by_kind.image.n_cases, 1);
        assert_eq!(report.by_kind.audio, KindMetrics::default());
        assert!(report.is_well_formed());
    }

    #[test]
    fn orthogonal_gold_loses_to_colinear_distractor() {
        let e = DeterministicEmbedder::new(8);
        let ctx = e.embed_text("wind\nwind\n").unwrap();
        let orth: Vec<f64> = ctx.values().iter().map(|&v| if v == 0.0 { 1.0 } else { 0.0 }).collect();
        let (ds, _) = dataset(&orth, ctx.values(), "wind");
        let report = eval_retrieval(&ds, &e).unwrap();
        assert_eq!(report.r_at_1, 0.0);
        assert_eq!(report.r_at_5, 1.0);
        assert_eq!(report.mrr, 0.5);
    }

    #[test]
    fn unlabelled_dataset_is_missing_gold() {
        let mut ds = EvalDataset::default();
        ds.episodes.push(fixtures::episode());
        assert_eq!(eval_retrieval(&ds, &DeterministicEmbedder::default()).unwrap_err().code(), "MISSING_GOLD");
    }

    /// Bids 1.0 only for the speaker of the turn after the prefix.
    struct Oracle(BTreeMap<String, SpeakerId>);

    impl AgentBackend for Oracle {
        fn complete(&self, _: &CompletionRequest) -> Result<Completion, BackendError> {
            unreachable!("decide_turn is overridden")
        }
        fn decide_turn(&self, ctx: &TurnContext<'_>) -> Result<TurnBid, BackendError> {
            let key = ctx.turns.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join("|");
            Ok(if self.0.get(&key) == Some(&ctx.speaker.id) { TurnBid::yes(1.0).unwrap() } else { TurnBid::no() })
        }
    }

    fn speaker_dataset() -> EvalDataset {
        let mut ep = fixtures::episode();
        for s in &mut ep.sessions {
            for t in &mut s.turns {
                t.text = format!("s{} t{}", s.index, t.index);
            }
        }
        let mut ds = EvalDataset::default();
        ds.episodes.push(ep);
        ds
    }

    #[test]
    fn oracle_bidder_is_always_right() {
        let ds = speaker_dataset();
        let truth = ds.episodes[0]
            .sessions
            .iter()
            .map(|s| {
                let key = s.turns[..6].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join("|");
                (key, s.turns[6].speaker.clone())
            })
            .collect();
        let r = eval_next_speaker(&ds, Arc::new(Oracle(truth)), 50, 1).unwrap();
        assert_eq!((r.accuracy, r.samples, r.skipped), (1.0, 50, 0));
    }

    #[test]
    fn random_bidder_is_near_one_third() {
        let r = eval_next_speaker(&speaker_dataset(), Arc::new(ScriptedBackend::seeded(9)), 1000, 3).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 0.05, "{r:?}");
    }

    #[test]
    fn short_sessions_are_skipped() {
        let mut ds = speaker_dataset();
        ds.episodes[0].sessions[0].turns.truncate(6);
        let r = eval_next_speaker(&ds, Arc::new(ScriptedBackend::seeded(9)), 300, 3).unwrap();
        assert!(r.skipped > 0);
        assert_eq!(r.samples + r.skipped, 300);
        ds.episodes[0].sessions.iter_mut().for_each(|s| s.turns.truncate(6));
        assert_eq!(eval_next_speaker(&ds, Arc::new(ScriptedBackend::seeded(9)), 10, 3).unwrap_err().code(), "INSUFFICIENT_TURNS");
    }
}
