//! Session engine: turn arbitration, modality scheduling, retrieval tokens,
//! and end-of-session memory writing.
//!
//! A session advances one turn at a time through [`SessionRunner::step`]. The
//! batch entry point [`run_episode`] and the HTTP service both drive that same
//! runner.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AgentBackend, BackendError, Embedder, RetrievalDecision, SummaryRequest, TurnBid, TurnContext};
use crate::memory::{parse_summary, Link, MemoryDraft, MemoryError, MemoryGraph, MemoryKind};
use crate::model::{
    render_transcript, Episode, EpisodeStatus, ItemId, MemoryId, ModalityItem, Session, SpeakerId, SpeakerProfile,
    Turn, MIN_TURNS_PER_SESSION,
};
use crate::pipeline::{Scenario, ScenarioError};
use crate::retrieval::{retrieve_top1_with_depth, ContextEncoding, RetrievalError, RetrievalResult};
use crate::rng::SplitMix64;

/// Turn index at which an untouched session schedules its first item.
pub const FALLBACK_TURN: usize = 5;
/// Extra turns allowed past the horizon before a session is abandoned.
pub const OVERRUN: usize = 8;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("EMPTY_PARTICIPANTS")]
    EmptyParticipants,
    #[error("SLOTS_EXHAUSTED at turn {0}")]
    SlotsExhausted(usize),
    #[error("SESSION_INCOMPLETE: {turns} turns, {introduced} items introduced")]
    SessionIncomplete { turns: usize, introduced: usize },
    #[error("BAD_PREFIX_LENGTH: {0} turns")]
    BadPrefixLength(usize),
    #[error("BAD_HORIZON: {0}")]
    BadHorizon(usize),
    #[error("NO_AGENT for speaker {0}")]
    NoAgent(SpeakerId),
    #[error("UNKNOWN_SPEAKER: {0}")]
    UnknownSpeaker(SpeakerId),
    #[error("UNKNOWN_ITEM: {0}")]
    UnknownItem(ItemId),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::EmptyParticipants => "EMPTY_PARTICIPANTS",
            EngineError::SlotsExhausted(_) => "SLOTS_EXHAUSTED",
            EngineError::SessionIncomplete { .. } => "SESSION_INCOMPLETE",
            EngineError::BadPrefixLength(_) => "BAD_PREFIX_LENGTH",
            EngineError::BadHorizon(_) => "BAD_HORIZON",
            EngineError::NoAgent(_) => "NO_AGENT",
            EngineError::UnknownSpeaker(_) => "UNKNOWN_SPEAKER",
            EngineError::UnknownItem(_) => "UNKNOWN_ITEM",
            EngineError::Backend(e) => e.code(),
            EngineError::Memory(e) => e.code(),
            EngineError::Retrieval(_) => "DIM_MISMATCH",
            EngineError::Scenario(e) => e.code(),
        }
    }
}

/// Backend per speaker id.
pub type Agents = BTreeMap<SpeakerId, Arc<dyn AgentBackend>>;

/// Every speaker driven by the same backend.
pub fn shared_agents(speakers: &[SpeakerProfile], backend: Arc<dyn AgentBackend>) -> Agents {
    speakers.iter().map(|s| (s.id.clone(), Arc::clone(&backend))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkCandidatePolicy {
    pub max_pairs_per_session: usize,
}

impl Default for LinkCandidatePolicy {
    fn default() -> Self {
        Self { max_pairs_per_session: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Planned session length in turns; at least 8.
    pub horizon: usize,
    /// Hops of linked memories brought along with a retrieval.
    pub link_depth: usize,
    pub link_policy: LinkCandidatePolicy,
    /// Summarise for every participant instead of the main speaker only.
    pub summarize_all: bool,
    /// Recall one text memory for the main speaker before each later session.
    pub opening_retrieval: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            horizon: 16,
            link_depth: 1,
            link_policy: LinkCandidatePolicy::default(),
            summarize_all: false,
            opening_retrieval: true,
        }
    }
}

impl EngineConfig {
    pub fn check(&self) -> Result<(), EngineError> {
        if self.horizon < MIN_TURNS_PER_SESSION {
            return Err(EngineError::BadHorizon(self.horizon));
        }
        Ok(())
    }
}

/// Highest-probability bidder; ties go to the smallest id; without bidders the
/// main speaker keeps the floor.
pub fn arbitrate_turn(bids: &[(SpeakerId, TurnBid)], main_speaker: &SpeakerId) -> Result<SpeakerId, EngineError> {
    if bids.is_empty() {
        return Err(EngineError::EmptyParticipants);
    }
    let mut best: Option<(&SpeakerId, f64)> = None;
    for (id, bid) in bids {
        let Some(p) = bid.probability().filter(|_| bid.wants_turn()) else {
            continue;
        };
        best = match best {
            Some((bid_id, bp)) if bp > p || (bp == p && bid_id <= id) => Some((bid_id, bp)),
            _ => Some((id, p)),
        };
    }
    Ok(best.map(|(id, _)| id.clone()).unwrap_or_else(|| main_speaker.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session: Session,
    pub introduced_count: usize,
    pub rng_seed: u64,
    pub horizon: usize,
    pub pending_insertion_turn: Option<usize>,
    /// Dedicated stream for fallback placement.
    rng: SplitMix64,
}

impl SessionState {
    pub fn new(session: Session, seed: u64, horizon: usize) -> Self {
        let introduced_count = session.introduced().count();
        let rng = SplitMix64::stream(seed, "modality", session.index as u64);
        Self {
            session,
            introduced_count,
            rng_seed: seed,
            horizon,
            pending_insertion_turn: None,
            rng,
        }
    }

    fn draw(&mut self, lo: u64, hi: u64) -> u64 {
        self.rng.inclusive(lo, hi)
    }

    pub fn next_slot(&self) -> Option<&ItemId> {
        self.session.modality_slots.get(self.introduced_count)
    }

    pub fn is_complete(&self) -> bool {
        self.session.turns.len() >= self.horizon.max(MIN_TURNS_PER_SESSION) && self.introduced_count == 2
    }

    fn emit(&mut self) -> ItemId {
        let id = self.session.modality_slots[self.introduced_count].clone();
        self.introduced_count += 1;
        self.pending_insertion_turn = None;
        id
    }
}

/// Decides which item, if any, appears at `turn_index`. The caller records
/// the emitted id on the turn it appends.
pub fn schedule_modality(
    state: &mut SessionState,
    turn_index: usize,
    main_decision: bool,
) -> Result<Option<ItemId>, EngineError> {
    if main_decision {
        if state.introduced_count >= 2 {
            return Err(EngineError::SlotsExhausted(turn_index));
        }
        return Ok(Some(state.emit()));
    }
    if turn_index == FALLBACK_TURN && state.introduced_count == 0 && state.pending_insertion_turn.is_none() {
        let turn = state.draw(FALLBACK_TURN as u64 + 1, state.horizon as u64) as usize;
        state.pending_insertion_turn = Some(turn);
    }
    if state.pending_insertion_turn == Some(turn_index) && state.introduced_count < 2 {
        return Ok(Some(state.emit()));
    }
    if state.introduced_count == 1 && state.pending_insertion_turn.is_none() && turn_index + 1 >= state.horizon {
        return Ok(Some(state.emit()));
    }
    Ok(None)
}

/// What one turn produced, for callers that stream events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub turn: Turn,
    pub introduced: Option<ModalityItem>,
    pub bids: Vec<(SpeakerId, TurnBid)>,
    pub decision: RetrievalDecision,
    pub retrieval: Option<RetrievalResult>,
}

/// Drives one session turn by turn.
#[derive(Debug, Clone)]
pub struct SessionRunner {
    pub state: SessionState,
    /// Main speaker first, then the partners.
    pub participants: Vec<SpeakerProfile>,
    pub items: BTreeMap<ItemId, ModalityItem>,
    pub opening: Option<RetrievalResult>,
    pub config: EngineConfig,
    pub nonce: u64,
}

fn profile<'a>(speakers: &'a [SpeakerProfile], id: &SpeakerId) -> Result<&'a SpeakerProfile, EngineError> {
    speakers.iter().find(|s| &s.id == id).ok_or_else(|| EngineError::UnknownSpeaker(id.clone()))
}

fn agent<'a>(agents: &'a Agents, id: &SpeakerId) -> Result<&'a dyn AgentBackend, EngineError> {
    agents.get(id).map(|a| a.as_ref()).ok_or_else(|| EngineError::NoAgent(id.clone()))
}

impl SessionRunner {
    /// Prepares a session. For sessions after the first, the main speaker
    /// recalls one text memory against a context made of who is present.
    #[allow(clippy::too_many_arguments)]
    pub fn open(
        session: Session,
        speakers: &[SpeakerProfile],
        items: BTreeMap<ItemId, ModalityItem>,
        graph: &MemoryGraph,
        embedder: &dyn Embedder,
        seed: u64,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        config.check()?;
        let mut participants = Vec::with_capacity(3);
        for id in session.participants() {
            participants.push(profile(speakers, id)?.clone());
        }
        for slot in &session.modality_slots {
            if !items.contains_key(slot) {
                return Err(EngineError::UnknownItem(slot.clone()));
            }
        }
        let opening = if session.index > 0 && config.opening_retrieval {
            let cue: Vec<String> = participants.iter().map(|p| format!("{} {}", p.name, p.relationship)).collect();
            let context = ContextEncoding::new(embedder.embed_text(&cue.join("\n"))?, 0);
            retrieve_top1_with_depth(&context, graph, &session.main_speaker, MemoryKind::Text, config.link_depth)?
        } else {
            None
        };
        let nonce = seed;
        let state = SessionState::new(session, seed, config.horizon);
        Ok(Self { state, participants, items, opening, config, nonce })
    }

    pub fn session(&self) -> &Session {
        &self.state.session
    }

    pub fn is_complete(&self) -> bool {
        self.state.is_complete()
    }

    /// Past the point where the session should certainly have completed.
    pub fn overran(&self) -> bool {
        self.state.session.turns.len() >= self.config.horizon + OVERRUN
    }

    fn context<'a>(
        &'a self,
        speaker: &'a SpeakerProfile,
        incoming: Option<&'a ModalityItem>,
        pending: Option<&'a ModalityItem>,
    ) -> TurnContext<'a> {
        TurnContext {
            session_index: self.state.session.index,
            turn_index: self.state.session.turns.len(),
            speaker,
            participants: &self.participants,
            turns: &self.state.session.turns,
            items: &self.items,
            incoming,
            pending_item: pending,
            opening_memory: self.opening.as_ref(),
            nonce: self.nonce,
        }
    }

    /// Runs one turn: modality scheduling, bids, arbitration, the speaker's
    /// retrieval decision and retrieval, then generation.
    pub fn step(&mut self, agents: &Agents, graph: &MemoryGraph, embedder: &dyn Embedder) -> Result<TurnOutcome, EngineError> {
        let turn_index = self.state.session.turns.len();
        let main = &self.participants[0];

        let main_decision = match self.state.next_slot().and_then(|id| self.items.get(id)) {
            Some(pending) => agent(agents, &main.id)?.decide_modality(&self.context(main, None, Some(pending)))?,
            None => false,
        };
        let introduced_id = schedule_modality(&mut self.state, turn_index, main_decision)?;
        let incoming = introduced_id.as_ref().and_then(|id| self.items.get(id));

        let mut bids = Vec::with_capacity(self.participants.len());
        for p in &self.participants {
            bids.push((p.id.clone(), agent(agents, &p.id)?.decide_turn(&self.context(p, incoming, None))?));
        }
        let speaker_id = arbitrate_turn(&bids, &main.id)?;
        let speaker = profile(&self.participants, &speaker_id)?;
        let backend = agent(agents, &speaker_id)?;
        let ctx = self.context(speaker, incoming, None);

        let decision = backend.decide_retrieval(&ctx)?;
        let retrieval = match decision.kind() {
            Some(kind) => {
                let context = ContextEncoding::encode(embedder, ctx.turns, &ctx.perceived())?;
                retrieve_top1_with_depth(&context, graph, &speaker_id, kind, self.config.link_depth)?
            }
            None => None,
        };
        let text = backend.generate_utterance(&ctx, retrieval.as_ref())?;

        let turn = Turn {
            index: turn_index,
            speaker: speaker_id,
            text,
            introduces: introduced_id,
            memory_refs: retrieval.as_ref().map(RetrievalResult::memory_ids).unwrap_or_default(),
        };
        let introduced = incoming.cloned();
        self.state.session.turns.push(turn.clone());
        Ok(TurnOutcome { turn, introduced, bids, decision, retrieval })
    }

    /// Appends a turn produced outside the bidding loop (a human seat).
    pub fn push_external(&mut self, speaker: &SpeakerId, text: String, introduce: bool) -> Result<TurnOutcome, EngineError> {
        profile(&self.participants, speaker)?;
        let turn_index = self.state.session.turns.len();
        let introduced_id = schedule_modality(&mut self.state, turn_index, introduce)?;
        let turn = Turn {
            index: turn_index,
            speaker: speaker.clone(),
            text,
            introduces: introduced_id.clone(),
            memory_refs: Vec::new(),
        };
        self.state.session.turns.push(turn.clone());
        Ok(TurnOutcome {
            turn,
            introduced: introduced_id.and_then(|id| self.items.get(&id).cloned()),
            bids: Vec::new(),
            decision: RetrievalDecision::NoRet,
            retrieval: None,
        })
    }

    /// Steps until the session is complete.
    pub fn run_to_completion(
        &mut self,
        agents: &Agents,
        graph: &MemoryGraph,
        embedder: &dyn Embedder,
    ) -> Result<Vec<TurnOutcome>, EngineError> {
        let mut out = Vec::new();
        while !self.is_complete() {
            if self.overran() {
                return Err(EngineError::SessionIncomplete {
                    turns: self.state.session.turns.len(),
                    introduced: self.state.introduced_count,
                });
            }
            out.push(self.step(agents, graph, embedder)?);
        }
        Ok(out)
    }
}

/// Ids created by [`close_session`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CloseOutcome {
    pub memories: Vec<MemoryId>,
    pub links: Vec<Link>,
    pub judge_calls: usize,
}

/// Writes the session into memory: summaries for each owner, one modality
/// memory per slot per owner, then links judged over candidate pairs.
///
/// Candidates for each owner are that owner's memories other than the new
/// text memories, most recent first; pairs are taken newest text memory first
/// until `max_pairs_per_session` judge calls have been made.
#[allow(clippy::too_many_arguments)]
pub fn close_session(
    session: &Session,
    speakers: &[SpeakerProfile],
    items: &BTreeMap<ItemId, ModalityItem>,
    summarizer: &dyn AgentBackend,
    graph: &mut MemoryGraph,
    embedder: &dyn Embedder,
    policy: &LinkCandidatePolicy,
    owners: &[SpeakerId],
    nonce: u64,
) -> Result<CloseOutcome, EngineError> {
    let introduced: Vec<&ItemId> = session.introduced().collect();
    let both = session.modality_slots.iter().all(|s| introduced.contains(&s));
    if session.turns.len() < MIN_TURNS_PER_SESSION || !both {
        return Err(EngineError::SessionIncomplete { turns: session.turns.len(), introduced: introduced.len() });
    }
    let slots = [
        items.get(&session.modality_slots[0]).ok_or_else(|| EngineError::UnknownItem(session.modality_slots[0].clone()))?,
        items.get(&session.modality_slots[1]).ok_or_else(|| EngineError::UnknownItem(session.modality_slots[1].clone()))?,
    ];
    let names: BTreeMap<SpeakerId, String> = speakers.iter().map(|s| (s.id.clone(), s.name.clone())).collect();
    let transcript = render_transcript(session, &names, items);

    let mut out = CloseOutcome::default();
    let mut budget = policy.max_pairs_per_session;
    for owner in owners {
        let perspective = profile(speakers, owner)?;
        let others = session
            .participants()
            .into_iter()
            .filter(|id| *id != owner)
            .map(|id| profile(speakers, id))
            .collect::<Result<Vec<_>, _>>()?;
        let raw = summarizer.summarize(&SummaryRequest {
            session_index: session.index,
            perspective,
            others,
            transcript: transcript.clone(),
            settings: slots,
            nonce,
        })?;
        let drafts = parse_summary(&raw, owner, session.index)?;

        let mut new_text = Vec::with_capacity(drafts.len());
        for draft in drafts {
            let embedding = embedder.embed_text(&draft.text)?;
            new_text.push(graph.insert(draft, embedding)?);
        }
        for item in slots {
            let draft = MemoryDraft::modality(owner.clone(), session.index, item.kind, item.id.clone(), item.caption.clone());
            out.memories.push(graph.insert(draft, embedder.embed_item(item)?)?);
        }
        out.memories.extend(new_text.iter().copied());

        let mut candidates: Vec<MemoryId> =
            graph.owned_by(owner).map(|u| u.id).filter(|id| !new_text.contains(id)).collect();
        candidates.sort_unstable_by(|a, b| b.cmp(a));
        'pairs: for &new_id in new_text.iter().rev() {
            for &cand in &candidates {
                if budget == 0 {
                    break 'pairs;
                }
                budget -= 1;
                out.judge_calls += 1;
                let a = graph.get(new_id).expect("just inserted").text.clone();
                let b = graph.get(cand).expect("candidate exists").text.clone();
                if summarizer.judge_link(&a, &b)? && graph.add_link(new_id, cand)? {
                    out.links.push(Link::new(new_id, cand));
                }
            }
        }
    }
    out.memories.sort_unstable();
    Ok(out)
}

/// Summary owners for a session under `config`.
pub fn summary_owners(session: &Session, config: &EngineConfig) -> Vec<SpeakerId> {
    if config.summarize_all {
        session.participants().into_iter().cloned().collect()
    } else {
        vec![session.main_speaker.clone()]
    }
}

/// Builds the empty session for plan `index` of `scenario`.
pub fn plan_session(scenario: &Scenario, index: usize) -> Session {
    let plan = &scenario.sessions[index];
    Session {
        index,
        main_speaker: scenario.main_speaker.clone(),
        partners: plan.partners.clone(),
        modality_slots: plan.items.clone(),
        turns: Vec::new(),
    }
}

pub fn empty_episode(scenario: &Scenario) -> Episode {
    Episode {
        id: scenario.id.clone(),
        speakers: scenario.speakers.clone(),
        main_speaker: scenario.main_speaker.clone(),
        intervals: scenario.intervals.clone(),
        sessions: Vec::new(),
        status: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub episode: Episode,
    pub graph: MemoryGraph,
}

/// Failure mid-episode: the partial run, marked aborted, plus the cause.
#[derive(Debug, Error)]
#[error("episode {} aborted: {error}", partial.episode.id)]
pub struct EpisodeAborted {
    pub partial: EpisodeRun,
    pub error: EngineError,
}

/// Runs every session of `scenario` and closes each one. On failure the
/// completed turns are kept in an aborted partial episode.
pub fn run_episode(
    scenario: &Scenario,
    agents: &Agents,
    summarizer: &dyn AgentBackend,
    embedder: &dyn Embedder,
    seed: u64,
    config: &EngineConfig,
) -> Result<EpisodeRun, Box<EpisodeAborted>> {
    let mut run = EpisodeRun { episode: empty_episode(scenario), graph: MemoryGraph::new() };
    let result = (|| -> Result<(), EngineError> {
        scenario.validate()?;
        config.check()?;
        let items = scenario.item_map();
        for index in 0..scenario.sessions.len() {
            let session = plan_session(scenario, index);
            let mut runner =
                SessionRunner::open(session, &scenario.speakers, items.clone(), &run.graph, embedder, seed, config.clone())?;
            let stepped = runner.run_to_completion(agents, &run.graph, embedder);
            run.episode.sessions.push(runner.state.session.clone());
            stepped?;
            let session = &run.episode.sessions[index];
            let owners = summary_owners(session, config);
            close_session(
                session,
                &scenario.speakers,
                &items,
                summarizer,
                &mut run.graph,
                embedder,
                &config.link_policy,
                &owners,
                seed,
            )?;
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(run),
        Err(error) => {
            run.episode.status = Some(EpisodeStatus::Aborted);
            Err(Box::new(EpisodeAborted { partial: run, error }))
        }
    }
}

/// Asks each participant's backend for a bid after a six-turn prefix and
/// arbitrates. `participants` lists the main speaker first.
pub fn predict_next_speaker(
    prefix: &[Turn],
    participants: &[SpeakerProfile],
    agents: &Agents,
    items: &BTreeMap<ItemId, ModalityItem>,
    session_index: usize,
    nonce: u64,
) -> Result<SpeakerId, EngineError> {
    const PREFIX: usize = 6;
    if prefix.len() != PREFIX {
        return Err(EngineError::BadPrefixLength(prefix.len()));
    }
    let main = participants.first().ok_or(EngineError::EmptyParticipants)?;
    let mut bids = Vec::with_capacity(participants.len());
    for p in participants {
        let ctx = TurnContext {
            session_index,
            turn_index: PREFIX,
            speaker: p,
            participants,
            turns: prefix,
            items,
            incoming: None,
            pending_item: None,
            opening_memory: None,
            nonce,
        };
        bids.push((p.id.clone(), agent(agents, &p.id)?.decide_turn(&ctx)?));
    }
    arbitrate_turn(&bids, &main.id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::DeterministicEmbedder;
    use crate::model::fixtures;

    fn yes(id: &str, p: f64) -> (SpeakerId, TurnBid) {
        (SpeakerId::new(id), TurnBid::yes(p).unwrap())
    }

    fn no(id: &str) -> (SpeakerId, TurnBid) {
        (SpeakerId::new(id), TurnBid::no())
    }

    #[test]
    fn arbitration_rules() {
        let main = SpeakerId::new("B");
        assert_eq!(arbitrate_turn(&[yes("A", 0.9), yes("B", 0.7), no("C")], &main).unwrap().as_str(), "A");
        assert_eq!(arbitrate_turn(&[yes("B", 0.5), yes("A", 0.5)], &main).unwrap().as_str(), "A");
        assert_eq!(arbitrate_turn(&[no("A"), no("B")], &main).unwrap().as_str(), "B");
        assert_eq!(arbitrate_turn(&[], &main).unwrap_err().code(), "EMPTY_PARTICIPANTS");
    }

    fn state(seed: u64, horizon: usize) -> SessionState {
        let mut s = fixtures::session(0, ["B", "C"], 0);
        s.turns.clear();
        SessionState::new(s, seed, horizon)
    }

    #[test]
    fn main_decision_emits_slots_in_order() {
        let mut st = state(1, 16);
        assert_eq!(schedule_modality(&mut st, 2, true).unwrap(), Some(ItemId::new("i0a")));
        assert_eq!(schedule_modality(&mut st, 3, true).unwrap(), Some(ItemId::new("i0b")));
        assert_eq!(schedule_modality(&mut st, 9, true).unwrap_err().code(), "SLOTS_EXHAUSTED");
    }

    #[test]
    fn fallback_draw_is_seeded_and_in_range() {
        let mut st = state(42, 16);
        for t in 0..5 {
            assert_eq!(schedule_modality(&mut st, t, false).unwrap(), None);
        }
        assert_eq!(schedule_modality(&mut st, 5, false).unwrap(), None);
        let pending = st.pending_insertion_turn.unwrap();
        assert!((6..=16).contains(&pending));
        let mut fresh = state(42, 16);
        let expected = fresh.draw(6, 16) as usize;
        assert_eq!(pending, expected);
        for t in 6..pending {
            assert_eq!(schedule_modality(&mut st, t, false).unwrap(), None);
        }
        assert_eq!(schedule_modality(&mut st, pending, false).unwrap(), Some(ItemId::new("i0a")));
    }

    #[test]
    fn second_slot_is_forced_near_the_horizon() {
        let mut st = state(3, 10);
        assert!(schedule_modality(&mut st, 1, true).unwrap().is_some());
        for t in 2..9 {
            assert_eq!(schedule_modality(&mut st, t, false).unwrap(), None, "turn {t}");
        }
        assert_eq!(schedule_modality(&mut st, 9, false).unwrap(), Some(ItemId::new("i0b")));
    }

    #[test]
    fn horizon_below_eight_is_rejected() {
        let cfg = EngineConfig { horizon: 7, ..EngineConfig::default() };
        assert_eq!(cfg.check().unwrap_err().code(), "BAD_HORIZON");
    }

    #[test]
    fn prefix_length_is_checked() {
        let people = fixtures::speakers();
        let agents = Agents::new();
        let turns: Vec<Turn> = (0..5).map(|i| Turn::new(i, "A", "hi")).collect();
        let err = predict_next_speaker(&turns, &people[..3], &agents, &BTreeMap::new(), 0, 0).unwrap_err();
        assert_eq!(err.code(), "BAD_PREFIX_LENGTH");
    }

    #[test]
    fn close_rejects_incomplete_sessions() {
        let people = fixtures::speakers();
        let session = fixtures::session(0, ["B", "C"], 7);
        let mut graph = MemoryGraph::new();
        let backend = crate::backend::ScriptedBackend::seeded(0);
        let err = close_session(
            &session,
            &people,
            &BTreeMap::new(),
            &backend,
            &mut graph,
            &DeterministicEmbedder::default(),
            &LinkCandidatePolicy::default(),
            &[SpeakerId::new("A")],
            0,
        )
        .unwrap_err();
        assert_eq!(err.code(), "SESSION_INCOMPLETE");
    }
}
