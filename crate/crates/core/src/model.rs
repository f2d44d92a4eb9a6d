//! Episode, session and turn records, and their structural validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Speaker identifier, unique within an episode.
    SpeakerId
);
string_id!(
    /// Modality item identifier, unique within a catalog.
    ItemId
);

/// Memory unit identifier. Assigned by the graph in creation order, so a larger
/// id always means a more recent memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryId(pub u64);

impl fmt::Display for MemoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: SpeakerId,
    pub name: String,
    pub relationship: String,
}

impl SpeakerProfile {
    pub fn new(id: impl Into<String>, name: impl Into<String>, relationship: impl Into<String>) -> Self {
        Self {
            id: SpeakerId::new(id),
            name: name.into(),
            relationship: relationship.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Image,
    Audio,
}

impl ModalityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModalityKind::Image => "image",
            ModalityKind::Audio => "audio",
        }
    }
}

/// An image or audio stimulus shared by everyone in a session. Only the caption
/// and an asset reference are kept; raw media never enters the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityItem {
    pub id: ItemId,
    pub kind: ModalityKind,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<EmbeddingVector>,
}

impl ModalityItem {
    pub fn new(id: impl Into<String>, kind: ModalityKind, caption: impl Into<String>) -> Self {
        Self {
            id: ItemId::new(id),
            kind,
            caption: caption.into(),
            location_tag: None,
            asset_uri: None,
            features: None,
        }
    }

    pub fn with_location(mut self, tag: impl Into<String>) -> Self {
        self.location_tag = Some(tag.into());
        self
    }

    /// Location tag usable for grouping: present, non-empty and not `none`.
    pub fn usable_location(&self) -> Option<&str> {
        self.location_tag
            .as_deref()
            .map(str::trim)
            .filter(|t| !t.is_empty() && !t.eq_ignore_ascii_case("none"))
    }
}

/// Gap between consecutive sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeInterval {
    Hours,
    Days,
    Weeks,
    Months,
    Years,
}

impl TimeInterval {
    pub const ALL: [TimeInterval; 5] = [
        TimeInterval::Hours,
        TimeInterval::Days,
        TimeInterval::Weeks,
        TimeInterval::Months,
        TimeInterval::Years,
    ];

    /// The phrase used in generation prompts.
    pub fn phrase(self) -> &'static str {
        match self {
            TimeInterval::Hours => "a few hours later",
            TimeInterval::Days => "a few days later",
            TimeInterval::Weeks => "a few weeks later",
            TimeInterval::Months => "a few months later",
            TimeInterval::Years => "a couple of years later",
        }
    }

    /// Parses a prompt phrase, tolerating case, surrounding quotes and a
    /// trailing comma or period.
    pub fn from_phrase(raw: &str) -> Option<Self> {
        let cleaned = raw
            .trim()
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '“' || c == '”' || c == ',' || c == '.')
            .trim()
            .to_lowercase();
        Self::ALL.into_iter().find(|i| i.phrase() == cleaned)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TimeInterval::Hours => "hours",
            TimeInterval::Days => "days",
            TimeInterval::Weeks => "weeks",
            TimeInterval::Months => "months",
            TimeInterval::Years => "years",
        }
    }

    /// Accepts either the short form (`days`) or the phrase.
    pub fn parse_any(raw: &str) -> Option<Self> {
        let t = raw.trim().to_lowercase();
        Self::ALL
            .into_iter()
            .find(|i| i.as_str() == t)
            .or_else(|| Self::from_phrase(raw))
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub speaker: SpeakerId,
    pub text: String,
    pub introduces: Option<ItemId>,
    pub memory_refs: Vec<MemoryId>,
}

impl Turn {
    pub fn new(index: usize, speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            index,
            speaker: SpeakerId::new(speaker),
            text: text.into(),
            introduces: None,
            memory_refs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub index: usize,
    pub main_speaker: SpeakerId,
    pub partners: [SpeakerId; 2],
    pub modality_slots: [ItemId; 2],
    pub turns: Vec<Turn>,
}

impl Session {
    pub fn participants(&self) -> [&SpeakerId; 3] {
        [&self.main_speaker, &self.partners[0], &self.partners[1]]
    }

    pub fn is_participant(&self, id: &SpeakerId) -> bool {
        self.participants().contains(&id)
    }

    pub fn introduced(&self) -> impl Iterator<Item = &ItemId> {
        self.turns.iter().filter_map(|t| t.introduces.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeStatus {
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub speakers: Vec<SpeakerProfile>,
    pub main_speaker: SpeakerId,
    pub intervals: Vec<TimeInterval>,
    pub sessions: Vec<Session>,
    /// Only set on partial episodes persisted after a failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<EpisodeStatus>,
}

impl Episode {
    pub fn speaker(&self, id: &SpeakerId) -> Option<&SpeakerProfile> {
        self.speakers.iter().find(|s| &s.id == id)
    }

    pub fn speaker_name<'a>(&'a self, id: &'a SpeakerId) -> &'a str {
        self.speaker(id).map(|s| s.name.as_str()).unwrap_or(id.as_str())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("episode serialises")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Reads a JSONL episode file, skipping blank lines.
pub fn read_episodes_jsonl(text: &str) -> Result<Vec<Episode>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(Episode::from_json_line)
        .collect()
}

pub fn write_episodes_jsonl<'a>(episodes: impl IntoIterator<Item = &'a Episode>) -> String {
    let mut out = String::new();
    for e in episodes {
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("embedding vector must have at least one dimension")]
    Empty,
    #[error("embedding entry {0} is not finite")]
    NonFinite(usize),
}

/// Fixed-dimension vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0);
        Self { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = VectorError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

/// Structural problems found by [`validate_episode`]. Declaration order is the
/// report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    NameDup,
    PartnerDup,
    MinTurns,
    PartnerUnused,
    BadSessionCount,
    BadSpeakerCount,
    OrphanSpeakerTurn,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::NameDup => "NAME_DUP",
            ViolationCode::PartnerDup => "PARTNER_DUP",
            ViolationCode::MinTurns => "MIN_TURNS",
            ViolationCode::PartnerUnused => "PARTNER_UNUSED",
            ViolationCode::BadSessionCount => "BAD_SESSION_COUNT",
            ViolationCode::BadSpeakerCount => "BAD_SPEAKER_COUNT",
            ViolationCode::OrphanSpeakerTurn => "ORPHAN_SPEAKER_TURN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Session index for per-session problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<usize>,
}

impl Violation {
    pub fn episode(code: ViolationCode) -> Self {
        Self { code, session: None }
    }

    pub fn session(code: ViolationCode, session: usize) -> Self {
        Self { code, session: Some(session) }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.session {
            Some(s) => write!(f, "{}@session{}", self.code.as_str(), s),
            None => f.write_str(self.code.as_str()),
        }
    }
}

pub const SPEAKERS_PER_EPISODE: usize = 4;
pub const SESSIONS_PER_EPISODE: usize = 3;
pub const MIN_TURNS_PER_SESSION: usize = 8;

/// Checks the structural rules every accepted episode satisfies. Problems are
/// returned, never raised; an empty report means the episode is valid.
pub fn validate_episode(episode: &Episode) -> Vec<Violation> {
    let mut out = BTreeSet::new();

    let mut names = BTreeSet::new();
    let mut ids = BTreeSet::new();
    for s in &episode.speakers {
        let name = s.name.trim().to_lowercase();
        if name.is_empty() || !names.insert(name) || !ids.insert(&s.id) {
            out.insert(Violation::episode(ViolationCode::NameDup));
        }
    }

    for session in &episode.sessions {
        let [a, b] = &session.partners;
        if a == b || a == &session.main_speaker || b == &session.main_speaker {
            out.insert(Violation::session(ViolationCode::PartnerDup, session.index));
        }
        if session.turns.len() < MIN_TURNS_PER_SESSION {
            out.insert(Violation::session(ViolationCode::MinTurns, session.index));
        }
        if session.turns.iter().any(|t| !session.is_participant(&t.speaker)) {
            out.insert(Violation::session(ViolationCode::OrphanSpeakerTurn, session.index));
        }
    }

    let used: BTreeSet<&SpeakerId> = episode
        .sessions
        .iter()
        .flat_map(|s| s.partners.iter())
        .collect();
    let unused = episode
        .speakers
        .iter()
        .filter(|s| s.id != episode.main_speaker)
        .any(|s| !used.contains(&s.id));
    if unused {
        out.insert(Violation::episode(ViolationCode::PartnerUnused));
    }

    if episode.sessions.len() != SESSIONS_PER_EPISODE
        || episode.intervals.len() + 1 != episode.sessions.len()
        || episode.sessions.iter().any(|s| s.main_speaker != episode.main_speaker)
    {
        out.insert(Violation::episode(ViolationCode::BadSessionCount));
    }
    if episode.speakers.len() != SPEAKERS_PER_EPISODE {
        out.insert(Violation::episode(ViolationCode::BadSpeakerCount));
    }

    // BTreeSet order is (code, session) with episode-level entries first.
    out.into_iter().collect()
}

/// Renders a session as `[Name] text` lines, with modality introductions shown
/// inline before the turn that introduces them.
pub fn render_transcript(
    session: &Session,
    names: &BTreeMap<SpeakerId, String>,
    items: &BTreeMap<ItemId, ModalityItem>,
) -> String {
    render_turns(&session.turns, names, items)
}

pub fn render_turns(
    turns: &[Turn],
    names: &BTreeMap<SpeakerId, String>,
    items: &BTreeMap<ItemId, ModalityItem>,
) -> String {
    let mut out = String::new();
    for t in turns {
        if let Some(item) = t.introduces.as_ref().and_then(|id| items.get(id)) {
            out.push_str(&render_modality(item));
            out.push('\n');
        }
        let name = names.get(&t.speaker).map(String::as_str).unwrap_or(t.speaker.as_str());
        out.push_str(&format!("[{}] {}\n", name, t.text));
    }
    out
}

/// Inline modality marker. Audio uses the caption framing the dialogue model
/// was trained with.
pub fn render_modality(item: &ModalityItem) -> String {
    match item.kind {
        ModalityKind::Image => format!("<image> {} </image>", item.caption),
        ModalityKind::Audio => format!("<start_audio> {} <end_audio>", item.caption),
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn codes(report: &[Violation]) -> Vec<String> {
        report.iter().map(ToString::to_string).collect()
    }

    #[test]
    fn well_formed_episode_is_valid() {
        assert!(validate_episode(&episode()).is_empty());
    }

    #[test]
    fn short_session_reports_min_turns() {
        let mut ep = episode();
        ep.sessions[2].turns.truncate(7);
        assert_eq!(codes(&validate_episode(&ep)), ["MIN_TURNS@session2"]);
    }

    #[test]
    fn repeated_partner_reports_partner_dup() {
        let mut ep = episode();
        ep.sessions[1] = session(1, ["B", "B"], 8);
        // D now only appears in session 2, so no PARTNER_UNUSED.
        assert_eq!(codes(&validate_episode(&ep)), ["PARTNER_DUP@session1"]);
    }

    #[test]
    fn duplicate_name_and_unused_partner() {
        let mut ep = episode();
        ep.speakers[3].name = "Alex".into();
        assert_eq!(codes(&validate_episode(&ep)), ["NAME_DUP"]);

        let mut ep = episode();
        ep.sessions[1] = session(1, ["B", "C"], 8);
        ep.sessions[2] = session(2, ["B", "C"], 8);
        assert_eq!(codes(&validate_episode(&ep)), ["PARTNER_UNUSED"]);
    }

    #[test]
    fn counts_and_orphans() {
        let mut ep = episode();
        ep.sessions[0].turns[3].speaker = SpeakerId::new("D");
        ep.speakers.pop();
        ep.sessions.pop();
        assert_eq!(
            codes(&validate_episode(&ep)),
            ["BAD_SESSION_COUNT", "BAD_SPEAKER_COUNT", "ORPHAN_SPEAKER_TURN@session0"]
        );
    }

    #[test]
    fn report_order_is_code_then_session() {
        let mut ep = episode();
        ep.sessions[2].turns.truncate(3);
        ep.sessions[0].turns.truncate(3);
        ep.sessions[1].partners = [SpeakerId::new("C"), SpeakerId::new("A")];
        assert_eq!(
            codes(&validate_episode(&ep)),
            // session 1 still has turns by D, who is no longer a participant
            ["PARTNER_DUP@session1", "MIN_TURNS@session0", "MIN_TURNS@session2", "ORPHAN_SPEAKER_TURN@session1"]
        );
        assert_eq!(validate_episode(&ep), validate_episode(&ep));
    }

    #[test]
    fn episode_json_field_names() {
        let ep = episode();
        let v: serde_json::Value = serde_json::from_str(&ep.to_json_line()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["id", "intervals", "main_speaker", "sessions", "speakers"]);
        assert_eq!(v["intervals"][0], "days");
        let turn = &v["sessions"][0]["turns"][1];
        assert_eq!(turn["introduces"], "i0a");
        assert!(turn["memory_refs"].as_array().unwrap().is_empty());
        assert_eq!(Episode::from_json_line(&ep.to_json_line()).unwrap(), ep);
    }

    #[test]
    fn interval_phrases() {
        assert_eq!(TimeInterval::from_phrase("\"a few hours later,\""), Some(TimeInterval::Hours));
        assert_eq!(TimeInterval::from_phrase("A couple of years later"), Some(TimeInterval::Years));
        assert_eq!(TimeInterval::from_phrase("a decade later"), None);
        assert_eq!(TimeInterval::parse_any("weeks"), Some(TimeInterval::Weeks));
    }

    #[test]
    fn vectors_reject_non_finite() {
        assert_eq!(EmbeddingVector::new(vec![]), Err(VectorError::Empty));
        assert_eq!(EmbeddingVector::new(vec![1.0, f64::NAN]), Err(VectorError::NonFinite(1)));
        assert!(serde_json::from_str::<EmbeddingVector>("[]").is_err());
    }
}
