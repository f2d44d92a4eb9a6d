use std::sync::Arc;

use m3c_core::backend::{Script, ScriptedBackend};
use m3c_core::eval::{eval_next_speaker, eval_retrieval, EvalDataset};
use m3c_core::model::{validate_episode, Episode};
use m3c_core::orchestrator::{run_episode, shared_agents, EngineConfig};
use m3c_core::pipeline::{read_ledger, run_generation, GenConfig, JobStatus, Scenario, SessionPlan};
use m3c_core::{
    AgentBackend, DeterministicEmbedder, Embedder, MemoryGraph, MemoryKind, ModalityItem, ModalityKind, SpeakerId,
    SpeakerProfile, TimeInterval,
};

fn scenario() -> Scenario {
    let speakers = vec![
        SpeakerProfile::new("A", "Alex", "friend"),
        SpeakerProfile::new("B", "Jamie", "sister"),
        SpeakerProfile::new("C", "Taylor", "colleague"),
        SpeakerProfile::new("D", "Morgan", "neighbor"),
    ];
    let pairs = [["B", "C"], ["C", "D"], ["D", "B"]];
    let mut items = Vec::new();
    let mut sessions = Vec::new();
    for (s, p) in pairs.iter().enumerate() {
        let a = ModalityItem::new(format!("p{s}"), ModalityKind::Image, format!("a crowded ferry deck, morning {s}"));
        let b = ModalityItem::new(format!("s{s}"), ModalityKind::Audio, format!("engine hum and announcements {s}"));
        sessions.push(SessionPlan { partners: [SpeakerId::new(p[0]), SpeakerId::new(p[1])], items: [a.id.clone(), b.id.clone()] });
        items.extend([a, b]);
    }
    Scenario {
        id: "ferry".into(),
        speakers,
        main_speaker: SpeakerId::new("A"),
        sessions,
        intervals: vec![TimeInterval::Hours, TimeInterval::Months],
        items,
    }
}

fn backend(seed: u64) -> Arc<dyn AgentBackend> {
    Arc::new(ScriptedBackend::new(Script::default(), seed))
}

#[test]
fn a_full_episode_is_valid_and_reproducible() {
    let sc = scenario();
    let embedder = DeterministicEmbedder::default();
    let run = |seed| {
        let b = backend(seed);
        run_episode(&sc, &shared_agents(&sc.speakers, Arc::clone(&b)), b.as_ref(), &embedder, seed, &EngineConfig::default())
            .unwrap()
    };
    let first = run(3);
    assert_eq!(validate_episode(&first.episode), []);
    assert_eq!(first.episode, run(3).episode);
    assert_eq!(first.graph.to_json(), run(3).graph.to_json());

    // Each session leaves its two items behind as modality memories of the main speaker.
    let main = SpeakerId::new("A");
    assert_eq!(first.graph.store(&main, MemoryKind::Image).count(), 3);
    assert_eq!(first.graph.store(&main, MemoryKind::Audio).count(), 3);
    assert!(first.graph.store(&main, MemoryKind::Text).count() >= 3);

    let line = first.episode.to_json_line();
    assert_eq!(Episode::from_json_line(&line).unwrap(), first.episode);
    assert_eq!(MemoryGraph::from_json(&first.graph.to_json()).unwrap(), first.graph);
}

#[test]
fn later_sessions_can_recall_earlier_ones() {
    let sc = scenario();
    let b = backend(11);
    let run = run_episode(&sc, &shared_agents(&sc.speakers, Arc::clone(&b)), b.as_ref(), &DeterministicEmbedder::default(), 11, &EngineConfig::default())
        .unwrap();
    for session in &run.episode.sessions {
        for turn in &session.turns {
            for id in &turn.memory_refs {
                let unit = run.graph.get(*id).expect("referenced memory exists");
                assert!(unit.session_of_origin < session.index, "memory from session {} used in {}", unit.session_of_origin, session.index);
            }
        }
    }
}

fn catalog() -> Vec<ModalityItem> {
    let mut items = Vec::new();
    for place in ["station", "bakery"] {
        for i in 0..7 {
            let kind = if i % 2 == 0 { ModalityKind::Image } else { ModalityKind::Audio };
            items.push(ModalityItem::new(format!("{place}{i}"), kind, format!("{place} scene number {i}")).with_location(place));
        }
    }
    items
}

#[test]
fn generation_resumes_and_feeds_the_evaluator() {
    let dir = tempfile::tempdir().unwrap();
    let embedder: Arc<dyn Embedder> = Arc::new(DeterministicEmbedder::default());
    let mut config = GenConfig::new(dir.path(), 2, 5);
    config.k = 2;
    config.workers = 2;
    let first = run_generation(&catalog(), backend(5), Arc::clone(&embedder), &config).unwrap();
    assert_eq!((first.jobs, first.resumed), (2, 0));

    config.episodes = 3;
    let second = run_generation(&catalog(), backend(5), Arc::clone(&embedder), &config).unwrap();
    assert_eq!((second.jobs, second.resumed), (3, 2));
    let ledger = read_ledger(&dir.path().join("ledger.jsonl")).unwrap();
    assert_eq!(ledger.len(), 3);
    let accepted = ledger.iter().filter(|e| e.status == JobStatus::Accepted).count();
    assert_eq!(accepted, second.accepted);
    assert!(accepted > 0);

    let provenance = std::fs::read_to_string(dir.path().join("provenance.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(provenance.lines().next().unwrap()).unwrap();
    for key in ["prompt", "vars", "output", "at"] {
        assert!(record.get(key).is_some(), "provenance record lacks {key}: {record}");
    }

    let data = EvalDataset::load(dir.path()).unwrap();
    assert_eq!(data.episodes.len(), accepted);
    for ep in &data.episodes {
        assert_eq!(validate_episode(ep), []);
    }
    let report = eval_retrieval(&data, embedder.as_ref()).unwrap();
    assert!(report.is_well_formed());
    let speaker = eval_next_speaker(&data, backend(1), 30, 1).unwrap();
    assert_eq!(speaker.samples + speaker.skipped, 30);
}
