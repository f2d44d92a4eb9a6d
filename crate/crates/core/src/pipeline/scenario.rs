//! Episode plans: who talks to whom, about which settings, and when.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AgentBackend, BackendError, CompletionRequest};
use crate::model::{ItemId, ModalityItem, SpeakerId, SpeakerProfile, TimeInterval, SESSIONS_PER_EPISODE, SPEAKERS_PER_EPISODE};
use crate::prompts::{PromptId, Vars};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub partners: [SpeakerId; 2],
    pub items: [ItemId; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub speakers: Vec<SpeakerProfile>,
    pub main_speaker: SpeakerId,
    pub sessions: Vec<SessionPlan>,
    pub intervals: Vec<TimeInterval>,
    /// Every item referenced by a session plan.
    pub items: Vec<ModalityItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("BAD_SPEAKERS: {0}")]
    BadSpeakers(String),
    #[error("BAD_PARTNERS: session {0}")]
    BadPartners(usize),
    #[error("BAD_INTERVALS: {sessions} sessions need {} intervals, got {got}", sessions.saturating_sub(1))]
    BadIntervals { sessions: usize, got: usize },
    #[error("NO_SESSIONS")]
    NoSessions,
    #[error("ITEM_REUSED: {0}")]
    ItemReused(ItemId),
    #[error("UNKNOWN_ITEM: {0}")]
    UnknownItem(ItemId),
    #[error("PARSE: {0}")]
    Parse(String),
    #[error("PAIR_MISALIGNED: session {0}")]
    PairMisaligned(usize),
    #[error("SCENARIO_EXHAUSTED after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: Box<ScenarioError> },
    #[error("NOT_ENOUGH_ITEMS: need {need}, have {have}")]
    NotEnoughItems { need: usize, have: usize },
}

impl ScenarioError {
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::BadSpeakers(_) => "BAD_SPEAKERS",
            ScenarioError::BadPartners(_) => "BAD_PARTNERS",
            ScenarioError::BadIntervals { .. } => "BAD_INTERVALS",
            ScenarioError::NoSessions => "NO_SESSIONS",
            ScenarioError::ItemReused(_) => "ITEM_REUSED",
            ScenarioError::UnknownItem(_) => "UNKNOWN_ITEM",
            ScenarioError::Parse(_) => "PARSE",
            ScenarioError::PairMisaligned(_) => "PAIR_MISALIGNED",
            ScenarioError::Exhausted { .. } => "SCENARIO_EXHAUSTED",
            ScenarioError::NotEnoughItems { .. } => "NOT_ENOUGH_ITEMS",
        }
    }
}

impl Scenario {
    pub fn item(&self, id: &ItemId) -> Option<&ModalityItem> {
        self.items.iter().find(|i| &i.id == id)
    }

    pub fn item_map(&self) -> BTreeMap<ItemId, ModalityItem> {
        self.items.iter().map(|i| (i.id.clone(), i.clone())).collect()
    }

    /// Speaker-table and session-plan legality. Any number of sessions is
    /// accepted here; dataset episodes additionally need exactly three.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.speakers.len() != SPEAKERS_PER_EPISODE {
            return Err(ScenarioError::BadSpeakers(format!("{} speakers", self.speakers.len())));
        }
        let ids: BTreeSet<&SpeakerId> = self.speakers.iter().map(|s| &s.id).collect();
        if ids.len() != self.speakers.len() {
            return Err(ScenarioError::BadSpeakers("duplicate speaker id".into()));
        }
        if !ids.contains(&self.main_speaker) {
            return Err(ScenarioError::BadSpeakers(format!("main speaker {} not listed", self.main_speaker)));
        }
        if self.sessions.is_empty() {
            return Err(ScenarioError::NoSessions);
        }
        if self.intervals.len() + 1 != self.sessions.len() {
            return Err(ScenarioError::BadIntervals { sessions: self.sessions.len(), got: self.intervals.len() });
        }
        let known: BTreeSet<&ItemId> = self.items.iter().map(|i| &i.id).collect();
        let mut used = BTreeSet::new();
        for (index, plan) in self.sessions.iter().enumerate() {
            let [a, b] = &plan.partners;
            if a == b || a == &self.main_speaker || b == &self.main_speaker || !ids.contains(a) || !ids.contains(b) {
                return Err(ScenarioError::BadPartners(index));
            }
            for item in &plan.items {
                if !known.contains(item) {
                    return Err(ScenarioError::UnknownItem(item.clone()));
                }
                if !used.insert(item) {
                    return Err(ScenarioError::ItemReused(item.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Identical captions are trivially compatible; otherwise the judge decides.
pub fn check_pair_alignment(a: &ModalityItem, b: &ModalityItem, judge: &dyn AgentBackend) -> Result<bool, BackendError> {
    if a.caption.trim() == b.caption.trim() {
        return Ok(true);
    }
    let mut vars = Vars::new();
    vars.insert("CAPTION A".into(), a.caption.clone());
    vars.insert("CAPTION B".into(), b.caption.clone());
    let material = PromptId::PairAlignment.render(&vars)?;
    judge.judge_yes_no("Can the two captions coexist in the same context?", &material)
}

fn line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*[-*]?\s*([^:]+?)\s*:\s*(.*?)\s*$").expect("valid regex"))
}

fn numbered_key(key: &str, prefix: &str) -> Option<usize> {
    key.strip_prefix(prefix).and_then(|rest| rest.split_whitespace().next()).and_then(|n| n.parse().ok())
}

const SPEAKER_IDS: [&str; 4] = ["A", "B", "C", "D"];

/// Parses a scenario response. `offered` is the list shown to the model, in
/// order; scene numbers are 1-based positions in it. Speakers get ids A (main)
/// and B, C, D (partners 1 to 3).
pub fn parse_scenario_response(id: &str, raw: &str, offered: &[ModalityItem]) -> Result<Scenario, ScenarioError> {
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    for line in raw.lines() {
        if let Some(c) = line_re().captures(line) {
            fields.insert(c[1].to_lowercase(), c[2].to_owned());
        }
    }
    let get = |key: &str| {
        fields
            .get(key)
            .filter(|v| !v.is_empty())
            .cloned()
            .ok_or_else(|| ScenarioError::Parse(format!("missing field {key:?}")))
    };

    let mut speakers = vec![SpeakerProfile::new(SPEAKER_IDS[0], get("main speaker name")?, get("main speaker relationship")?)];
    for n in 1..=3 {
        speakers.push(SpeakerProfile::new(
            SPEAKER_IDS[n],
            get(&format!("partner {n} name"))?,
            get(&format!("partner {n} relationship"))?,
        ));
    }
    let by_name = |name: &str| {
        speakers
            .iter()
            .find(|s| s.name.eq_ignore_ascii_case(name.trim()))
            .map(|s| s.id.clone())
            .ok_or_else(|| ScenarioError::Parse(format!("unknown partner name {name:?}")))
    };

    let session_count = fields.keys().filter_map(|k| numbered_key(k, "scene numbers for session ")).max().unwrap_or(0);
    if session_count != SESSIONS_PER_EPISODE {
        return Err(ScenarioError::Parse(format!("expected {SESSIONS_PER_EPISODE} sessions, found {session_count}")));
    }

    let mut sessions = Vec::new();
    let mut used_items = Vec::new();
    for n in 1..=session_count {
        let scenes = get(&format!("scene numbers for session {n}"))?;
        let numbers: Vec<usize> = scenes
            .split(|c: char| c == ',' || c.is_whitespace() || c == '&')
            .filter(|s| !s.is_empty() && *s != "and")
            .map(|s| s.trim_matches(|c: char| !c.is_ascii_digit()).parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| ScenarioError::Parse(format!("bad scene numbers {scenes:?}")))?;
        let [x, y] = numbers[..] else {
            return Err(ScenarioError::Parse(format!("session {n} needs two scene numbers")));
        };
        let pick = |k: usize| {
            offered
                .get(k.wrapping_sub(1))
                .map(|i| i.id.clone())
                .ok_or_else(|| ScenarioError::Parse(format!("scene number {k} out of range")))
        };
        let items = [pick(x)?, pick(y)?];
        used_items.extend(items.iter().cloned());

        let names = get(&format!("two partners' names in scene {n}"))?;
        let parts: Vec<&str> = names.split([',', '&']).map(str::trim).filter(|s| !s.is_empty()).collect();
        let [p, q] = parts[..] else {
            return Err(ScenarioError::Parse(format!("session {n} needs two partner names")));
        };
        sessions.push(SessionPlan { partners: [by_name(p)?, by_name(q)?], items });
    }

    let mut intervals = Vec::new();
    for n in 1..session_count {
        let phrase = get(&format!("time interval between session {n} and {}", n + 1))?;
        intervals.push(
            TimeInterval::from_phrase(&phrase).ok_or_else(|| ScenarioError::Parse(format!("unknown interval {phrase:?}")))?,
        );
    }

    let mut items: Vec<ModalityItem> = Vec::new();
    for id in &used_items {
        if !items.iter().any(|i| &i.id == id) {
            items.push(offered.iter().find(|i| &i.id == id).expect("picked from offered").clone());
        }
    }
    let scenario = Scenario {
        id: id.to_owned(),
        speakers,
        main_speaker: SpeakerId::new(SPEAKER_IDS[0]),
        sessions,
        intervals,
        items,
    };
    if scenario.speakers.iter().map(|s| s.name.to_lowercase()).collect::<BTreeSet<_>>().len() != SPEAKERS_PER_EPISODE {
        return Err(ScenarioError::BadSpeakers("duplicate speaker name".into()));
    }
    Ok(scenario)
}

pub const SCENARIO_ATTEMPTS: usize = 5;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl BuildError {
    pub fn code(&self) -> &'static str {
        match self {
            BuildError::Scenario(e) => e.code(),
            BuildError::Backend(e) => e.code(),
        }
    }
}

/// Asks the backend for a scenario over `cluster`, validating each answer and
/// redrawing up to [`SCENARIO_ATTEMPTS`] times. Every session's item pair must
/// also pass [`check_pair_alignment`].
pub fn build_scenario(
    id: &str,
    cluster: &[ModalityItem],
    backend: &dyn AgentBackend,
    seed: u64,
) -> Result<Scenario, BuildError> {
    let need = 2 * SESSIONS_PER_EPISODE;
    if cluster.len() < need {
        return Err(ScenarioError::NotEnoughItems { need, have: cluster.len() }.into());
    }
    let list: Vec<String> = cluster.iter().enumerate().map(|(i, item)| format!("{}. {}", i + 1, item.caption)).collect();
    let mut last = ScenarioError::Parse("no attempt made".into());
    for attempt in 0..SCENARIO_ATTEMPTS {
        let mut vars = Vars::new();
        vars.insert("MODALITY LIST".into(), list.join("\n"));
        vars.insert("setting_count".into(), cluster.len().to_string());
        vars.insert("attempt".into(), attempt.to_string());
        let nonce = seed.wrapping_add(attempt as u64);
        let out = backend.complete(&CompletionRequest::render(PromptId::Scenario, vars, nonce)?)?;
        let candidate = parse_scenario_response(id, &out.text, cluster).and_then(|s| s.validate().map(|_| s));
        let scenario = match candidate {
            Ok(s) => s,
            Err(e) => {
                tracing::debug!(attempt, error = %e, "scenario rejected");
                last = e;
                continue;
            }
        };
        let mut aligned = Ok(());
        for (index, plan) in scenario.sessions.iter().enumerate() {
            let a = scenario.item(&plan.items[0]).expect("validated");
            let b = scenario.item(&plan.items[1]).expect("validated");
            if !check_pair_alignment(a, b, backend)? {
                aligned = Err(ScenarioError::PairMisaligned(index));
                break;
            }
        }
        match aligned {
            Ok(()) => return Ok(scenario),
            Err(e) => last = e,
        }
    }
    Err(ScenarioError::Exhausted { attempts: SCENARIO_ATTEMPTS, last: Box::new(last) }.into())
}
