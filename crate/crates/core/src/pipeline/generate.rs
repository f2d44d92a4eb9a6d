//! Session synthesis and post-hoc tagging for generated episodes.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::backend::{AgentBackend, BackendError, CompletionRequest, Embedder};
use crate::memory::MemoryGraph;
use crate::model::{render_transcript, Episode, ItemId, MemoryId, ModalityItem, Session, SpeakerId, SpeakerProfile, Turn};
use crate::orchestrator::{close_session, empty_episode, plan_session, summary_owners, EngineConfig, EngineError, EpisodeRun};
use crate::prompts::{capitalize, letter_label, ordinal_word, parse_letter_label, PromptId, Vars};

use super::scenario::{build_scenario, BuildError, Scenario};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("BAD_RESPONSE: {0:?}")]
    BadResponse(String),
    #[error("DUPLICATE_TURN: both settings placed at utterance {0}")]
    DuplicateTurn(usize),
    #[error("OUT_OF_RANGE: utterance {number} of {len}")]
    OutOfRange { number: usize, len: usize },
    #[error("BAD_LINE: line {0}")]
    BadLine(usize),
    #[error("BAD_LETTER: line {0}")]
    BadLetter(usize),
    #[error("BAD_NUMBER: line {0}")]
    BadNumber(usize),
}

impl TagError {
    pub fn code(&self) -> &'static str {
        match self {
            TagError::BadResponse(_) => "BAD_RESPONSE",
            TagError::DuplicateTurn(_) => "DUPLICATE_TURN",
            TagError::OutOfRange { .. } => "OUT_OF_RANGE",
            TagError::BadLine(_) => "BAD_LINE",
            TagError::BadLetter(_) => "BAD_LETTER",
            TagError::BadNumber(_) => "BAD_NUMBER",
        }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tag(#[from] TagError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("TOO_FEW_TURNS: session {session} parsed {turns} turns")]
    TooFewTurns { session: usize, turns: usize },
}

impl GenError {
    pub fn code(&self) -> &'static str {
        match self {
            GenError::Build(e) => e.code(),
            GenError::Backend(e) => e.code(),
            GenError::Tag(e) => e.code(),
            GenError::Engine(e) => e.code(),
            GenError::TooFewTurns { .. } => "TOO_FEW_TURNS",
        }
    }
}

fn line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\[([^\]]+)\]\s*:?\s*(.+?)\s*$").expect("valid regex"))
}

/// Parses `[Name] text` lines into turns. Lines in any other shape, or from
/// names outside `participants`, are skipped.
pub fn parse_dialogue(raw: &str, participants: &[&SpeakerProfile]) -> Vec<Turn> {
    let mut turns = Vec::new();
    for line in raw.lines() {
        let Some(caps) = line_re().captures(line) else { continue };
        let name = caps[1].trim();
        let Some(who) = participants.iter().find(|p| p.name.eq_ignore_ascii_case(name)) else {
            tracing::debug!(name, "dropping line from unknown speaker");
            continue;
        };
        turns.push(Turn::new(turns.len(), who.id.as_str(), &caps[2]));
    }
    turns
}

fn profile<'a>(speakers: &'a [SpeakerProfile], id: &SpeakerId) -> Result<&'a SpeakerProfile, EngineError> {
    speakers.iter().find(|s| &s.id == id).ok_or_else(|| EngineError::UnknownSpeaker(id.clone()))
}

fn names(speakers: &[SpeakerProfile]) -> BTreeMap<SpeakerId, String> {
    speakers.iter().map(|s| (s.id.clone(), s.name.clone())).collect()
}

/// The main speaker's memories from sessions before `session`, in id order.
fn prior_memories<'g>(graph: &'g MemoryGraph, main: &'g SpeakerId, session: usize) -> Vec<(MemoryId, &'g str)> {
    let mut out: Vec<(MemoryId, &str)> = graph
        .owned_by(main)
        .filter(|u| u.session_of_origin < session)
        .map(|u| (u.id, u.text.as_str()))
        .collect();
    out.sort_by_key(|(id, _)| *id);
    out
}

/// Asks the backend for session `index` of `scenario`, given the sessions
/// already written. The returned session has turns but no tags.
pub fn generate_session(
    scenario: &Scenario,
    index: usize,
    previous: &[Session],
    graph: &MemoryGraph,
    backend: &dyn AgentBackend,
    nonce: u64,
) -> Result<Session, GenError> {
    let mut session = plan_session(scenario, index);
    let items = scenario.item_map();
    let speaker_names = names(&scenario.speakers);
    let main = profile(&scenario.speakers, &scenario.main_speaker)?;
    let p1 = profile(&scenario.speakers, &session.partners[0])?;
    let p2 = profile(&scenario.speakers, &session.partners[1])?;
    let caption = |slot: usize| {
        items
            .get(&session.modality_slots[slot])
            .map(|i| i.caption.clone())
            .ok_or_else(|| EngineError::UnknownItem(session.modality_slots[slot].clone()))
    };

    let mut history = String::new();
    for s in previous {
        history.push_str(&format!(
            "###{} session conversation:\n{}\n",
            capitalize(&ordinal_word(s.index)),
            render_transcript(s, &speaker_names, &items)
        ));
    }
    let (time, continuity) = match index.checked_sub(1).and_then(|i| scenario.intervals.get(i)) {
        Some(interval) => (
            format!(", set {} than the previous session", interval.phrase()),
            format!(
                "This session continues the earlier conversations, so {} may naturally bring up things from previous sessions.\n",
                main.name
            ),
        ),
        None => (String::new(), String::new()),
    };
    let memories: Vec<&str> = prior_memories(graph, &main.id, index).into_iter().map(|(_, t)| t).collect();

    let mut vars = Vars::new();
    vars.insert("PREVIOUS SESSIONS".into(), history);
    vars.insert("SESSION ORDINAL".into(), ordinal_word(index));
    vars.insert("TIME CONTEXT".into(), time);
    vars.insert("CONTINUITY".into(), continuity);
    vars.insert("MAIN SPEAKER NAME".into(), main.name.clone());
    vars.insert("MAIN SPEAKER RELATIONSHIP".into(), main.relationship.clone());
    vars.insert("PARTNER 1 NAME".into(), p1.name.clone());
    vars.insert("PARTNER 1 RELATIONSHIP".into(), p1.relationship.clone());
    vars.insert("PARTNER 2 NAME".into(), p2.name.clone());
    vars.insert("PARTNER 2 RELATIONSHIP".into(), p2.relationship.clone());
    vars.insert("CAPTION 1".into(), caption(0)?);
    vars.insert("CAPTION 2".into(), caption(1)?);
    vars.insert("memories".into(), serde_json::to_string(&memories).expect("strings serialise"));
    vars.insert("session".into(), index.to_string());

    let out = backend.complete(&CompletionRequest::render(PromptId::SessionGeneration, vars, nonce)?)?;
    session.turns = parse_dialogue(&out.text, &[main, p1, p2]);
    Ok(session)
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").expect("valid regex"))
}

/// Reads the two 1-based utterance numbers from a modality-tagging answer and
/// returns them 0-based. Numbers after the word "utterance" are preferred.
pub fn parse_modality_tags(raw: &str, turn_count: usize) -> Result<[usize; 2], TagError> {
    let lower = raw.to_lowercase();
    let tail = match lower.find("utterance") {
        Some(pos) => &lower[pos..],
        None => &lower[..],
    };
    let numbers: Vec<usize> = number_re().find_iter(tail).filter_map(|m| m.as_str().parse().ok()).collect();
    let (a, b) = match numbers.as_slice() {
        [] => return Err(TagError::BadResponse(raw.to_owned())),
        [one] => (*one, *one),
        [a, b, ..] => (*a, *b),
    };
    for n in [a, b] {
        if n == 0 || n > turn_count {
            return Err(TagError::OutOfRange { number: n, len: turn_count });
        }
    }
    if a == b {
        return Err(TagError::DuplicateTurn(a));
    }
    Ok([a - 1, b - 1])
}

/// Marks the turns where each setting first appears.
pub fn tag_modality_turns(
    session: &mut Session,
    speakers: &[SpeakerProfile],
    items: &BTreeMap<ItemId, ModalityItem>,
    backend: &dyn AgentBackend,
    nonce: u64,
) -> Result<(), GenError> {
    let speaker_names = names(speakers);
    let name = |id: &SpeakerId| speaker_names.get(id).cloned().unwrap_or_else(|| id.to_string());
    let list: Vec<String> =
        session.turns.iter().enumerate().map(|(i, t)| format!("{}. [{}] {}", i + 1, name(&t.speaker), t.text)).collect();
    let texts: Vec<&str> = session.turns.iter().map(|t| t.text.as_str()).collect();
    let caption = |slot: usize| {
        items
            .get(&session.modality_slots[slot])
            .map(|i| i.caption.clone())
            .ok_or_else(|| EngineError::UnknownItem(session.modality_slots[slot].clone()))
    };
    let mut vars = Vars::new();
    vars.insert("CAPTION A".into(), caption(0)?);
    vars.insert("CAPTION B".into(), caption(1)?);
    vars.insert("UTTERANCE LIST".into(), list.join("\n"));
    vars.insert("utterances".into(), serde_json::to_string(&texts).expect("strings serialise"));
    vars.insert("session".into(), session.index.to_string());

    let out = backend.complete(&CompletionRequest::render(PromptId::ModalityTagging, vars, nonce)?)?;
    let [a, b] = parse_modality_tags(&out.text, session.turns.len())?;
    for t in &mut session.turns {
        t.introduces = None;
    }
    session.turns[a].introduces = Some(session.modality_slots[0].clone());
    session.turns[b].introduces = Some(session.modality_slots[1].clone());
    Ok(())
}

fn ref_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([A-Za-z]+)\s*-\s*(\d+)\s*$").expect("valid regex"))
}

/// Parses "Letter-Number" lines into 0-based (utterance, memory) pairs.
/// `none` means no references.
pub fn parse_memory_tags(raw: &str, utterances: usize, memories: usize) -> Result<Vec<(usize, usize)>, TagError> {
    let trimmed = raw.trim().trim_end_matches('.').trim();
    if trimmed.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in trimmed.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let caps = ref_re().captures(line).ok_or(TagError::BadLine(i + 1))?;
        let letter = parse_letter_label(&caps[1].to_uppercase())
            .filter(|&u| u < utterances)
            .ok_or(TagError::BadLetter(i + 1))?;
        let number: usize = caps[2].parse().map_err(|_| TagError::BadNumber(i + 1))?;
        if number == 0 || number > memories {
            return Err(TagError::BadNumber(i + 1));
        }
        out.push((letter, number - 1));
    }
    Ok(out)
}

/// Attaches memory references to the main speaker's turns. Only memories
/// from earlier sessions are offered. References landing on a partner's
/// turn are dropped.
pub fn tag_memory_refs(
    session: &mut Session,
    speakers: &[SpeakerProfile],
    graph: &MemoryGraph,
    backend: &dyn AgentBackend,
    nonce: u64,
) -> Result<(), GenError> {
    let memories = prior_memories(graph, &session.main_speaker, session.index);
    if memories.is_empty() {
        return Ok(());
    }
    let speaker_names = names(speakers);
    let name = |id: &SpeakerId| speaker_names.get(id).cloned().unwrap_or_else(|| id.to_string());
    let conversation: Vec<String> = session
        .turns
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. [{}] {}", letter_label(i), name(&t.speaker), t.text))
        .collect();
    let list: Vec<String> = memories.iter().enumerate().map(|(i, (_, text))| format!("{}. {}", i + 1, text)).collect();
    let texts: Vec<&str> = session.turns.iter().map(|t| t.text.as_str()).collect();
    let memory_texts: Vec<&str> = memories.iter().map(|(_, t)| *t).collect();

    let mut vars = Vars::new();
    vars.insert("SESSION ORDINAL".into(), ordinal_word(session.index));
    vars.insert("SESSION CONVERSATION".into(), conversation.join("\n"));
    vars.insert("MAIN SPEAKER NAME".into(), name(&session.main_speaker));
    vars.insert("MEMORY LIST".into(), list.join("\n"));
    vars.insert("utterances".into(), serde_json::to_string(&texts).expect("strings serialise"));
    vars.insert("memories".into(), serde_json::to_string(&memory_texts).expect("strings serialise"));
    vars.insert("session".into(), session.index.to_string());

    let out = backend.complete(&CompletionRequest::render(PromptId::MemoryTagging, vars, nonce)?)?;
    let refs = parse_memory_tags(&out.text, session.turns.len(), memories.len())?;
    for t in &mut session.turns {
        t.memory_refs.clear();
    }
    for (u, m) in refs {
        let turn = &mut session.turns[u];
        if turn.speaker != session.main_speaker {
            tracing::debug!(turn = u, "memory reference on a partner turn dropped");
            continue;
        }
        let id = memories[m].0;
        if !turn.memory_refs.contains(&id) {
            turn.memory_refs.push(id);
        }
    }
    Ok(())
}

/// Generates, tags and closes every session of `scenario` in order.
pub fn generate_from_scenario(
    scenario: &Scenario,
    backend: &dyn AgentBackend,
    embedder: &dyn Embedder,
    seed: u64,
    config: &EngineConfig,
) -> Result<EpisodeRun, GenError> {
    scenario.validate().map_err(BuildError::from)?;
    let items = scenario.item_map();
    let mut episode: Episode = empty_episode(scenario);
    let mut graph = MemoryGraph::new();
    for index in 0..scenario.sessions.len() {
        let nonce = seed.wrapping_add(index as u64);
        let mut session = generate_session(scenario, index, &episode.sessions, &graph, backend, nonce)?;
        if session.turns.len() < crate::model::MIN_TURNS_PER_SESSION {
            return Err(GenError::TooFewTurns { session: index, turns: session.turns.len() });
        }
        tag_modality_turns(&mut session, &scenario.speakers, &items, backend, nonce)?;
        tag_memory_refs(&mut session, &scenario.speakers, &graph, backend, nonce)?;
        let owners = summary_owners(&session, config);
        close_session(
            &session,
            &scenario.speakers,
            &items,
            backend,
            &mut graph,
            embedder,
            &config.link_policy,
            &owners,
            nonce,
        )?;
        episode.sessions.push(session);
    }
    Ok(EpisodeRun { episode, graph })
}

/// Scenario construction followed by [`generate_from_scenario`].
pub fn generate_episode(
    id: &str,
    cluster: &[ModalityItem],
    backend: &dyn AgentBackend,
    embedder: &dyn Embedder,
    seed: u64,
    config: &EngineConfig,
) -> Result<(Scenario, EpisodeRun), GenError> {
    let scenario = build_scenario(id, cluster, backend, seed)?;
    let run = generate_from_scenario(&scenario, backend, embedder, seed, config)?;
    Ok((scenario, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{DeterministicEmbedder, ScriptedBackend};
    use crate::model::{fixtures, validate_episode, ModalityKind};

    fn cluster(n: usize) -> Vec<ModalityItem> {
        let captions = [
            "A golden retriever chases a ball across the lawn.",
            "Children laugh near a fountain.",
            "A vendor sells ice cream from a cart.",
            "Birds chirp in the tall oak trees.",
            "A man jogs along the park path.",
            "A picnic blanket covered with sandwiches.",
            "Leaves rustle in a gentle breeze.",
            "A kite flies high above the meadow.",
        ];
        (0..n)
            .map(|i| {
                let kind = if i % 3 == 1 { ModalityKind::Audio } else { ModalityKind::Image };
                ModalityItem::new(format!("p{i}"), kind, captions[i % captions.len()]).with_location("park")
            })
            .collect()
    }

    #[test]
    fn dialogue_lines_are_parsed_and_noise_skipped() {
        let speakers = fixtures::speakers();
        let who: Vec<&SpeakerProfile> = speakers.iter().take(3).collect();
        let turns = parse_dialogue("Here we go:\n[Jamie] Hi!\n[alex]: Hello.\n[Zed] who?\n\n[Taylor] Hey", &who);
        assert_eq!(turns.len(), 3);
        assert_eq!(turns[1].speaker, SpeakerId::new("A"));
        assert_eq!(turns[1].text, "Hello.");
        assert_eq!(turns[2].index, 2);
    }

    #[test]
    fn modality_tag_parsing() {
        assert_eq!(parse_modality_tags("Settings at utterance 2 and 7", 10).unwrap(), [1, 6]);
        assert_eq!(parse_modality_tags("3, 5", 10).unwrap(), [2, 4]);
        assert_eq!(parse_modality_tags("utterance 4", 10).unwrap_err(), TagError::DuplicateTurn(4));
        assert_eq!(parse_modality_tags("3 and 3", 10).unwrap_err(), TagError::DuplicateTurn(3));
        assert_eq!(parse_modality_tags("utterance 2 and 11", 10).unwrap_err(), TagError::OutOfRange { number: 11, len: 10 });
        assert_eq!(parse_modality_tags("0 and 1", 10).unwrap_err().code(), "OUT_OF_RANGE");
        assert_eq!(parse_modality_tags("no idea", 10).unwrap_err().code(), "BAD_RESPONSE");
    }

    #[test]
    fn memory_tag_parsing() {
        assert_eq!(parse_memory_tags("none", 5, 3).unwrap(), vec![]);
        assert_eq!(parse_memory_tags("None.", 5, 3).unwrap(), vec![]);
        assert_eq!(parse_memory_tags("A-3\nc - 1\n", 5, 3).unwrap(), vec![(0, 2), (2, 0)]);
        assert_eq!(parse_memory_tags("A-3\nA3", 5, 3).unwrap_err(), TagError::BadLine(2));
        assert_eq!(parse_memory_tags("F-1", 5, 3).unwrap_err(), TagError::BadLetter(1));
        assert_eq!(parse_memory_tags("A-4", 5, 3).unwrap_err(), TagError::BadNumber(1));
        assert_eq!(parse_memory_tags("A-0", 5, 3).unwrap_err().code(), "BAD_NUMBER");
    }

    #[test]
    fn scripted_episode_is_structurally_valid() {
        let backend = ScriptedBackend::seeded(7);
        let (scenario, run) =
            generate_episode("ep00000", &cluster(8), &backend, &DeterministicEmbedder::default(), 7, &EngineConfig::default())
                .unwrap();
        assert_eq!(scenario.sessions.len(), 3);
        assert!(validate_episode(&run.episode).is_empty(), "{:?}", validate_episode(&run.episode));
        // Main speaker memories: two modality units per session at least.
        assert!(run.graph.owned_by(&scenario.main_speaker).count() >= 6);
        let refs: usize = run.episode.sessions.iter().flat_map(|s| &s.turns).map(|t| t.memory_refs.len()).sum();
        assert!(refs > 0, "later sessions recall earlier memories");
        for s in &run.episode.sessions {
            for t in &s.turns {
                for id in &t.memory_refs {
                    assert!(run.graph.get(*id).unwrap().session_of_origin < s.index);
                }
            }
        }
    }

    #[test]
    fn first_session_has_no_memory_tags() {
        let mut session = fixtures::session(0, ["B", "C"], 8);
        let graph = MemoryGraph::new();
        tag_memory_refs(&mut session, &fixtures::speakers(), &graph, &ScriptedBackend::seeded(0), 0).unwrap();
        assert!(session.turns.iter().all(|t| t.memory_refs.is_empty()));
    }
}
