//! Live sessions: the driver thread, the human seat and floor control.

use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use m3c_core::backend::{AgentBackend, BackendError, Completion, CompletionRequest, Embedder, TurnContext};
use m3c_core::memory::MemoryGraph;
use m3c_core::orchestrator::{close_session, summary_owners, Agents, CloseOutcome, EngineConfig, SessionRunner, TurnOutcome};
use m3c_core::pipeline::Scenario;
use m3c_core::{Episode, RetrievalDecision, RetrievalResult, SpeakerId, TurnBid};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::oneshot;

use crate::error::ApiError;
use crate::events::{EventKind, EventLog};

type Ack = oneshot::Sender<Result<usize, ApiError>>;

struct Queued {
    text: String,
    introduce: bool,
    ack: Ack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloseReport {
    pub session_id: String,
    pub turns: usize,
    pub memories: Vec<m3c_core::MemoryId>,
    pub links: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Default)]
struct Floor {
    /// The engine is waiting for the human before the next turn.
    pending: bool,
    queued: Option<Queued>,
    /// Taken by the human seat's utterance, acknowledged once the turn lands.
    in_flight: Option<Ack>,
    close_requested: bool,
    report: Option<CloseReport>,
    close_waiters: Vec<oneshot::Sender<CloseReport>>,
}

/// Shared between HTTP handlers, the human seat and the driver.
#[derive(Default)]
pub struct FloorControl {
    floor: Mutex<Floor>,
    cv: Condvar,
}

/// A session seat occupied by a person. It goes through the same bid
/// interface as agents: certain when input is queued, silent otherwise.
pub struct HumanSeat {
    control: Arc<FloorControl>,
    may_insert: bool,
}

impl AgentBackend for HumanSeat {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        Err(BackendError::Config(format!("human seat cannot answer prompt {}", request.prompt)))
    }

    fn decide_turn(&self, _: &TurnContext<'_>) -> Result<TurnBid, BackendError> {
        let floor = self.control.floor.lock().expect("floor lock");
        Ok(if floor.queued.is_some() { TurnBid::yes(1.0).expect("1.0 is a probability") } else { TurnBid::no() })
    }

    fn decide_modality(&self, _: &TurnContext<'_>) -> Result<bool, BackendError> {
        let floor = self.control.floor.lock().expect("floor lock");
        Ok(self.may_insert && floor.queued.as_ref().is_some_and(|q| q.introduce))
    }

    fn decide_retrieval(&self, _: &TurnContext<'_>) -> Result<RetrievalDecision, BackendError> {
        Ok(RetrievalDecision::NoRet)
    }

    fn generate_utterance(&self, _: &TurnContext<'_>, _: Option<&RetrievalResult>) -> Result<String, BackendError> {
        let mut floor = self.control.floor.lock().expect("floor lock");
        let queued = floor
            .queued
            .take()
            .ok_or_else(|| BackendError::Protocol { raw: String::new(), expected: "queued human input" })?;
        floor.in_flight = Some(queued.ack);
        Ok(queued.text)
    }
}

/// Status snapshot for `GET /sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub episode_id: String,
    pub index: usize,
    pub human: Option<SpeakerId>,
    pub pending: bool,
    pub closed: bool,
    pub last_seq: u64,
}

pub struct LiveSession {
    pub id: String,
    pub episode_id: String,
    pub index: usize,
    pub human: Option<SpeakerId>,
    pub may_insert: bool,
    pub log: Arc<EventLog>,
    control: Arc<FloorControl>,
}

impl LiveSession {
    pub fn new(id: String, episode_id: String, index: usize, human: Option<SpeakerId>, may_insert: bool) -> Self {
        Self { id, episode_id, index, human, may_insert, log: Arc::default(), control: Arc::default() }
    }

    pub fn seat(&self) -> Option<HumanSeat> {
        self.human.as_ref().map(|_| HumanSeat { control: Arc::clone(&self.control), may_insert: self.may_insert })
    }

    pub fn status(&self) -> SessionStatus {
        let floor = self.control.floor.lock().expect("floor lock");
        SessionStatus {
            session_id: self.id.clone(),
            episode_id: self.episode_id.clone(),
            index: self.index,
            human: self.human.clone(),
            pending: floor.pending,
            closed: floor.report.is_some(),
            last_seq: self.log.last_seq(),
        }
    }

    /// Queues a human utterance. The receiver resolves with the turn index
    /// once the human wins the floor.
    pub fn post(&self, speaker: Option<&SpeakerId>, text: String, introduce: bool) -> Result<oneshot::Receiver<Result<usize, ApiError>>, ApiError> {
        let seat = self.human.as_ref().ok_or(ApiError::NoSeat)?;
        if speaker.is_some_and(|s| s != seat) {
            return Err(ApiError::BadRequest(format!("seat belongs to {seat}")));
        }
        if text.trim().is_empty() {
            return Err(ApiError::BadRequest("empty utterance".into()));
        }
        if introduce && !self.may_insert {
            return Err(ApiError::InsertNotAllowed);
        }
        let mut floor = self.control.floor.lock().expect("floor lock");
        if floor.report.is_some() {
            return Err(ApiError::SessionClosed);
        }
        if !floor.pending || floor.queued.is_some() {
            return Err(ApiError::NotYourTurn);
        }
        let (tx, rx) = oneshot::channel();
        floor.queued = Some(Queued { text, introduce, ack: tx });
        floor.pending = false;
        self.control.cv.notify_all();
        Ok(rx)
    }

    /// Asks the driver to close as soon as the session is complete. Resolves
    /// immediately for a session that is already closed.
    pub fn request_close(&self) -> Result<CloseReport, oneshot::Receiver<CloseReport>> {
        let mut floor = self.control.floor.lock().expect("floor lock");
        if let Some(report) = &floor.report {
            return Ok(report.clone());
        }
        let (tx, rx) = oneshot::channel();
        floor.close_waiters.push(tx);
        floor.close_requested = true;
        self.control.cv.notify_all();
        Err(rx)
    }

    /// Blocks the driver until the human posts, a close is requested, or the
    /// window runs out.
    fn await_floor(&self, window: Duration) {
        let mut floor = self.control.floor.lock().expect("floor lock");
        if floor.queued.is_some() || floor.close_requested {
            return;
        }
        floor.pending = true;
        let deadline = Instant::now() + window;
        while floor.queued.is_none() && !floor.close_requested {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            floor = self.control.cv.wait_timeout(floor, deadline - now).expect("floor lock").0;
        }
        floor.pending = false;
    }

    fn ack_turn(&self, index: usize) {
        if let Some(ack) = self.control.floor.lock().expect("floor lock").in_flight.take() {
            let _ = ack.send(Ok(index));
        }
    }

    fn finish(&self, report: CloseReport) {
        let mut floor = self.control.floor.lock().expect("floor lock");
        floor.pending = false;
        for ack in floor.queued.take().map(|q| q.ack).into_iter().chain(floor.in_flight.take()) {
            let _ = ack.send(Err(ApiError::SessionClosed));
        }
        for waiter in floor.close_waiters.drain(..) {
            let _ = waiter.send(report.clone());
        }
        floor.report = Some(report);
        drop(floor);
        self.log.finish();
    }
}

/// Server-side state of one episode.
pub struct EpisodeEntry {
    pub scenario: Scenario,
    pub episode: Episode,
    pub graph: MemoryGraph,
    pub backend: Arc<dyn AgentBackend>,
    pub human: Option<SpeakerId>,
    pub seed: u64,
    pub active: Option<String>,
}

pub struct Driver {
    pub live: Arc<LiveSession>,
    pub runner: SessionRunner,
    pub agents: Agents,
    pub summarizer: Arc<dyn AgentBackend>,
    pub embedder: Arc<dyn Embedder>,
    pub graph: MemoryGraph,
    pub entry: Arc<Mutex<EpisodeEntry>>,
    pub engine: EngineConfig,
    pub floor_window: Duration,
    pub persist: Option<PathBuf>,
}

fn emit_turn(log: &EventLog, outcome: &TurnOutcome) {
    if let Some(item) = &outcome.introduced {
        log.push(EventKind::Modality, json!({ "turn": outcome.turn.index, "item": item }));
    }
    if let Some(r) = &outcome.retrieval {
        log.push(
            EventKind::Retrieval,
            json!({
                "turn": outcome.turn.index,
                "speaker": outcome.turn.speaker,
                "decision": outcome.decision,
                "unit": r.unit,
                "score": r.score,
                "linked": r.expansion.iter().map(|u| u.id).collect::<Vec<_>>(),
                "memory_ids": r.memory_ids(),
            }),
        );
    }
    log.push(EventKind::Turn, serde_json::to_value(&outcome.turn).expect("turn serialises"));
}

impl Driver {
    pub fn spawn(self) -> std::thread::JoinHandle<()> {
        std::thread::Builder::new()
            .name(format!("session-{}", self.live.id))
            .spawn(move || self.run())
            .expect("spawn session thread")
    }

    fn run(mut self) {
        let live = Arc::clone(&self.live);
        let stepped = self.drive();
        let session = self.runner.session().clone();
        let turns = session.turns.len();
        let mut report = CloseReport { session_id: live.id.clone(), turns, memories: vec![], links: 0, error: None };

        let mut entry = self.entry.lock().expect("episode lock");
        entry.episode.sessions.push(session);
        entry.active = None;
        let closed = stepped.and_then(|_| self.close(&mut entry));
        match closed {
            Ok(outcome) => {
                report.memories = outcome.memories.clone();
                report.links = outcome.links.len();
                live.log.push(
                    EventKind::MemoryWritten,
                    json!({ "memories": outcome.memories, "links": outcome.links, "judge_calls": outcome.judge_calls }),
                );
            }
            Err(e) => {
                tracing::warn!(session = %live.id, error = %e, "session ended with an error");
                entry.episode.status = Some(m3c_core::model::EpisodeStatus::Aborted);
                live.log.push(EventKind::Error, json!({ "code": e.code(), "message": e.to_string() }));
                report.error = Some(e.code().to_owned());
            }
        }
        live.log.push(EventKind::SessionClosed, json!({ "session_id": live.id, "index": live.index, "turns": turns }));
        if let Some(dir) = &self.persist {
            if let Err(e) = persist(dir, &entry) {
                tracing::warn!(error = %e, "could not persist episode");
            }
        }
        drop(entry);
        live.finish(report);
    }

    fn drive(&mut self) -> Result<(), ApiError> {
        while !self.runner.is_complete() {
            if self.runner.overran() {
                let s = self.runner.session();
                return Err(m3c_core::orchestrator::EngineError::SessionIncomplete {
                    turns: s.turns.len(),
                    introduced: s.introduced().count(),
                }
                .into());
            }
            if self.live.human.is_some() {
                self.live.await_floor(self.floor_window);
            }
            let outcome = self.runner.step(&self.agents, &self.graph, self.embedder.as_ref())?;
            emit_turn(&self.live.log, &outcome);
            if Some(&outcome.turn.speaker) == self.live.human.as_ref() {
                self.live.ack_turn(outcome.turn.index);
            }
        }
        Ok(())
    }

    fn close(&self, entry: &mut EpisodeEntry) -> Result<CloseOutcome, ApiError> {
        let session = entry.episode.sessions.last().expect("session just pushed").clone();
        let owners = summary_owners(&session, &self.engine);
        let items = entry.scenario.item_map();
        let speakers = entry.scenario.speakers.clone();
        Ok(close_session(
            &session,
            &speakers,
            &items,
            self.summarizer.as_ref(),
            &mut entry.graph,
            self.embedder.as_ref(),
            &self.engine.link_policy,
            &owners,
            entry.seed,
        )?)
    }
}

fn persist(dir: &std::path::Path, entry: &EpisodeEntry) -> std::io::Result<()> {
    std::fs::create_dir_all(dir.join("episodes"))?;
    std::fs::create_dir_all(dir.join("memory"))?;
    let id = &entry.episode.id;
    std::fs::write(dir.join("episodes").join(format!("{id}.json")), serde_json::to_string_pretty(&entry.episode)?)?;
    std::fs::write(dir.join("memory").join(format!("{id}.json")), entry.graph.to_json())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seated(may_insert: bool) -> LiveSession {
        LiveSession::new("e-s0".into(), "e".into(), 0, Some(SpeakerId::new("B")), may_insert)
    }

    #[test]
    fn posting_needs_an_open_floor() {
        let live = seated(false);
        assert_eq!(live.post(None, "hi".into(), false).unwrap_err().code(), "NOT_YOUR_TURN");
        live.control.floor.lock().unwrap().pending = true;
        let _rx = live.post(None, "hi".into(), false).unwrap();
        // one queued utterance at a time
        live.control.floor.lock().unwrap().pending = true;
        assert_eq!(live.post(None, "again".into(), false).unwrap_err().code(), "NOT_YOUR_TURN");
    }

    #[test]
    fn seat_checks() {
        let live = seated(false);
        live.control.floor.lock().unwrap().pending = true;
        assert_eq!(live.post(Some(&SpeakerId::new("C")), "hi".into(), false).unwrap_err().code(), "BAD_REQUEST");
        assert_eq!(live.post(None, "  ".into(), false).unwrap_err().code(), "BAD_REQUEST");
        assert_eq!(live.post(None, "hi".into(), true).unwrap_err().code(), "INSERT_NOT_ALLOWED");
        let open = LiveSession::new("e-s0".into(), "e".into(), 0, None, false);
        assert_eq!(open.post(None, "hi".into(), false).unwrap_err().code(), "NO_SEAT");
    }

    #[test]
    fn finish_fails_queued_input_and_answers_waiters() {
        let live = seated(true);
        live.control.floor.lock().unwrap().pending = true;
        let mut rx = live.post(None, "hi".into(), true).unwrap();
        let Err(mut waiter) = live.request_close() else { panic!("not closed yet") };
        let report = CloseReport { session_id: "e-s0".into(), turns: 8, memories: vec![], links: 0, error: None };
        live.finish(report.clone());
        assert_eq!(rx.try_recv().unwrap().unwrap_err().code(), "SESSION_CLOSED");
        assert_eq!(waiter.try_recv().unwrap(), report);
        assert_eq!(live.request_close().unwrap(), report);
        assert!(live.log.is_finished());
    }
}
