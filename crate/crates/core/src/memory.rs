//! Owner-scoped multimodal memory graph and the summary wire format.
//!
//! Summaries travel as fragments joined by `<sep>`, each ending in an
//! attribution suffix: `(about Jamie)` or `(from first session, about me)`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{EmbeddingVector, ItemId, MemoryId, ModalityKind, SpeakerId};

pub const SEP: &str = "<sep>";
pub const NO_MEMORY: &str = "no memory";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryKind {
    Text,
    Image,
    Audio,
}

impl From<ModalityKind> for MemoryKind {
    fn from(k: ModalityKind) -> Self {
        match k {
            ModalityKind::Image => MemoryKind::Image,
            ModalityKind::Audio => MemoryKind::Audio,
        }
    }
}

impl MemoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryKind::Text => "text",
            MemoryKind::Image => "image",
            MemoryKind::Audio => "audio",
        }
    }
}

/// Who a text memory is about, from its owner's point of view.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum About {
    /// The owner ("I ~" memories).
    Myself,
    /// Another person, by the name the summary used.
    Person(String),
}

impl About {
    fn from_name(name: &str) -> Self {
        let n = name.trim();
        if n.eq_ignore_ascii_case("me") || n.eq_ignore_ascii_case("myself") {
            About::Myself
        } else {
            About::Person(n.to_owned())
        }
    }

    /// Name as written in the attribution suffix.
    pub fn display_name(&self) -> &str {
        match self {
            About::Myself => "me",
            About::Person(n) => n,
        }
    }
}

impl Serialize for About {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            About::Myself => s.serialize_str("self"),
            About::Person(n) => s.serialize_str(n),
        }
    }
}

impl<'de> Deserialize<'de> for About {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "self" { About::Myself } else { About::Person(s) })
    }
}

/// A memory before the graph assigns its id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryDraft {
    pub owner: SpeakerId,
    pub session_of_origin: usize,
    pub kind: MemoryKind,
    /// Memory sentence, or the item caption for modality memories.
    pub text: String,
    #[serde(default)]
    pub about: Option<About>,
    #[serde(default)]
    pub modality_ref: Option<ItemId>,
}

impl MemoryDraft {
    pub fn text(owner: SpeakerId, session: usize, text: impl Into<String>, about: About) -> Self {
        Self {
            owner,
            session_of_origin: session,
            kind: MemoryKind::Text,
            text: text.into(),
            about: Some(about),
            modality_ref: None,
        }
    }

    pub fn modality(
        owner: SpeakerId,
        session: usize,
        kind: ModalityKind,
        item: ItemId,
        caption: impl Into<String>,
    ) -> Self {
        Self {
            owner,
            session_of_origin: session,
            kind: kind.into(),
            text: caption.into(),
            about: None,
            modality_ref: Some(item),
        }
    }

    fn check(&self) -> Result<(), MemoryError> {
        let ok = match self.kind {
            MemoryKind::Text => self.about.is_some() && self.modality_ref.is_none(),
            MemoryKind::Image | MemoryKind::Audio => self.modality_ref.is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(MemoryError::InconsistentUnit(self.kind))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryUnit {
    pub id: MemoryId,
    #[serde(flatten)]
    pub body: MemoryDraft,
}

impl std::ops::Deref for MemoryUnit {
    type Target = MemoryDraft;

    fn deref(&self) -> &MemoryDraft {
        &self.body
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("UNKNOWN_ID: no memory unit {0}")]
    UnknownId(MemoryId),
    #[error("SELF_LINK: cannot link {0} to itself")]
    SelfLink(MemoryId),
    #[error("MALFORMED_FRAGMENT: summary fragment {0} lacks an attribution suffix")]
    MalformedFragment(usize),
    #[error("UNKNOWN_ORDINAL: unsupported session ordinal {0:?}")]
    UnknownOrdinal(String),
    #[error("NON_TEXT_UNIT: only text memories have a summary form")]
    NonTextUnit,
    #[error("inconsistent {0:?} memory: text needs `about`, modality memories need `modality_ref`")]
    InconsistentUnit(MemoryKind),
    #[error("memory graph document is invalid: {0}")]
    Document(String),
}

impl MemoryError {
    pub fn code(&self) -> &'static str {
        match self {
            MemoryError::UnknownId(_) => "UNKNOWN_ID",
            MemoryError::SelfLink(_) => "SELF_LINK",
            MemoryError::MalformedFragment(_) => "MALFORMED_FRAGMENT",
            MemoryError::UnknownOrdinal(_) => "UNKNOWN_ORDINAL",
            MemoryError::NonTextUnit => "NON_TEXT_UNIT",
            MemoryError::InconsistentUnit(_) => "INCONSISTENT_UNIT",
            MemoryError::Document(_) => "BAD_DOCUMENT",
        }
    }
}

/// Unordered pair with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Link(MemoryId, MemoryId);

impl Link {
    pub fn new(a: MemoryId, b: MemoryId) -> Self {
        if a <= b {
            Link(a, b)
        } else {
            Link(b, a)
        }
    }

    pub fn ends(self) -> (MemoryId, MemoryId) {
        (self.0, self.1)
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

/// Memory units, their embeddings and the undirected links between them.
///
/// Units are indexed per (owner, kind), mirroring separate textual, visual and
/// auditory stores for every speaker.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryGraph {
    units: BTreeMap<MemoryId, MemoryUnit>,
    embeddings: BTreeMap<MemoryId, EmbeddingVector>,
    links: BTreeSet<Link>,
    adjacency: BTreeMap<MemoryId, BTreeSet<MemoryId>>,
    stores: BTreeMap<(SpeakerId, MemoryKind), BTreeSet<MemoryId>>,
    next_id: u64,
}

impl MemoryGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, draft: MemoryDraft, embedding: EmbeddingVector) -> Result<MemoryId, MemoryError> {
        draft.check()?;
        let id = MemoryId(self.next_id);
        self.next_id += 1;
        self.place(MemoryUnit { id, body: draft }, embedding);
        Ok(id)
    }

    fn place(&mut self, unit: MemoryUnit, embedding: EmbeddingVector) {
        let id = unit.id;
        self.stores
            .entry((unit.owner.clone(), unit.kind))
            .or_default()
            .insert(id);
        self.adjacency.entry(id).or_default();
        self.units.insert(id, unit);
        self.embeddings.insert(id, embedding);
    }

    pub fn get(&self, id: MemoryId) -> Option<&MemoryUnit> {
        self.units.get(&id)
    }

    pub fn embedding(&self, id: MemoryId) -> Option<&EmbeddingVector> {
        self.embeddings.get(&id)
    }

    pub fn contains(&self, id: MemoryId) -> bool {
        self.units.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> impl Iterator<Item = &MemoryUnit> {
        self.units.values()
    }

    /// Units of one store, ascending by id.
    pub fn store(&self, owner: &SpeakerId, kind: MemoryKind) -> impl Iterator<Item = &MemoryUnit> {
        self.stores
            .get(&(owner.clone(), kind))
            .into_iter()
            .flatten()
            .map(|id| &self.units[id])
    }

    /// Units of one owner across all kinds, ascending by id.
    pub fn owned_by<'a>(&'a self, owner: &'a SpeakerId) -> impl Iterator<Item = &'a MemoryUnit> {
        self.units.values().filter(move |u| &u.owner == owner)
    }

    pub fn add_link(&mut self, a: MemoryId, b: MemoryId) -> Result<bool, MemoryError> {
        for id in [a, b] {
            if !self.contains(id) {
                return Err(MemoryError::UnknownId(id));
            }
        }
        if a == b {
            return Err(MemoryError::SelfLink(a));
        }
        let added = self.links.insert(Link::new(a, b));
        if added {
            self.adjacency.entry(a).or_default().insert(b);
            self.adjacency.entry(b).or_default().insert(a);
        }
        Ok(added)
    }

    pub fn is_linked(&self, a: MemoryId, b: MemoryId) -> bool {
        self.links.contains(&Link::new(a, b))
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> impl Iterator<Item = Link> + '_ {
        self.links.iter().copied()
    }

    pub fn neighbors(&self, id: MemoryId) -> Result<&BTreeSet<MemoryId>, MemoryError> {
        self.adjacency.get(&id).ok_or(MemoryError::UnknownId(id))
    }

    /// Every unit reachable within `depth` hops of `id`, excluding `id`.
    pub fn linked_closure(&self, id: MemoryId, depth: usize) -> Result<BTreeSet<MemoryId>, MemoryError> {
        self.neighbors(id)?;
        let mut seen = BTreeSet::from([id]);
        let mut queue = VecDeque::from([(id, 0usize)]);
        while let Some((cur, d)) = queue.pop_front() {
            if d == depth {
                continue;
            }
            for &next in &self.adjacency[&cur] {
                if seen.insert(next) {
                    queue.push_back((next, d + 1));
                }
            }
        }
        seen.remove(&id);
        Ok(seen)
    }

    pub fn to_json(&self) -> String {
        let doc = GraphDocument {
            units: self
                .units
                .values()
                .map(|u| StoredUnit {
                    unit: u.clone(),
                    embedding: self.embeddings[&u.id].clone(),
                })
                .collect(),
            links: self.links.iter().map(|l| [l.0, l.1]).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("graph serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, MemoryError> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| MemoryError::Document(e.to_string()))?;
        let mut graph = MemoryGraph::new();
        for stored in doc.units {
            stored.unit.body.check()?;
            if graph.contains(stored.unit.id) {
                return Err(MemoryError::Document(format!("duplicate id {}", stored.unit.id)));
            }
            graph.next_id = graph.next_id.max(stored.unit.id.0 + 1);
            graph.place(stored.unit, stored.embedding);
        }
        for [a, b] in doc.links {
            graph.add_link(a, b)?;
        }
        Ok(graph)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredUnit {
    #[serde(flatten)]
    unit: MemoryUnit,
    embedding: EmbeddingVector,
}

#[derive(Serialize, Deserialize)]
struct GraphDocument {
    units: Vec<StoredUnit>,
    links: Vec<[MemoryId; 2]>,
}

fn suffix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\(\s*(?:from\s+(\w+)\s+session\s*,\s*)?about\s+([^()]+?)\s*\)\s*\.?\s*$")
            .expect("valid regex")
    })
}

fn ordinal(word: &str) -> Result<usize, MemoryError> {
    match word.to_lowercase().as_str() {
        "first" => Ok(0),
        "second" => Ok(1),
        "third" => Ok(2),
        _ => Err(MemoryError::UnknownOrdinal(word.to_owned())),
    }
}

/// Parses summariser output into text memory drafts owned by `owner`.
pub fn parse_summary(raw: &str, owner: &SpeakerId, session: usize) -> Result<Vec<MemoryDraft>, MemoryError> {
    let trimmed = raw.trim();
    if trimmed.trim_end_matches('.').trim().eq_ignore_ascii_case(NO_MEMORY) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (index, fragment) in trimmed.split(SEP).enumerate() {
        let fragment = fragment.trim();
        if fragment.is_empty() {
            continue;
        }
        let caps = suffix_re()
            .captures(fragment)
            .ok_or(MemoryError::MalformedFragment(index))?;
        let whole = caps.get(0).expect("match");
        let text = fragment[..whole.start()].trim();
        if text.is_empty() {
            return Err(MemoryError::MalformedFragment(index));
        }
        let origin = match caps.get(1) {
            Some(word) => ordinal(word.as_str())?,
            None => session,
        };
        out.push(MemoryDraft::text(
            owner.clone(),
            origin,
            text,
            About::from_name(&caps[2]),
        ));
    }
    Ok(out)
}

/// Canonical summary form: `<text> (about <name>)` fragments joined by ` <sep> `.
pub fn format_summary<'a>(units: impl IntoIterator<Item = &'a MemoryDraft>) -> Result<String, MemoryError> {
    let mut parts = Vec::new();
    for u in units {
        if u.kind != MemoryKind::Text {
            return Err(MemoryError::NonTextUnit);
        }
        let about = u.about.as_ref().ok_or(MemoryError::NonTextUnit)?;
        parts.push(format!("{} (about {})", u.text.trim(), about.display_name()));
    }
    if parts.is_empty() {
        return Ok(NO_MEMORY.to_owned());
    }
    Ok(parts.join(&format!(" {SEP} ")))
}

/// Rewrites `/`-delimited summaries (the dataset prompt's convention) into the
/// canonical `<sep>` form. Only slashes that follow an attribution suffix are
/// treated as delimiters, so "24/7" inside a sentence survives.
pub fn normalize_delimiters(raw: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\)\s*\.?\s*/\s*").expect("valid regex"));
    re.replace_all(raw.trim(), format!(") {SEP} ")).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn owner() -> SpeakerId {
        SpeakerId::new("alex")
    }

    fn vec1() -> EmbeddingVector {
        EmbeddingVector::new(vec![1.0, 0.0]).unwrap()
    }

    fn text_unit(g: &mut MemoryGraph, text: &str) -> MemoryId {
        g.insert(MemoryDraft::text(owner(), 0, text, About::Myself), vec1()).unwrap()
    }

    #[test]
    fn parses_attributed_fragment_with_session_clause() {
        let raw = "Jamie suggested recording some stunts, and I think it would be fun to have footage to remember this day. (from first session, about Jamie)";
        let units = parse_summary(raw, &owner(), 2).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].about, Some(About::Person("Jamie".into())));
        assert_eq!(units[0].session_of_origin, 0);
        assert!(units[0].text.ends_with("remember this day."));
    }

    #[test]
    fn no_memory_yields_nothing() {
        assert!(parse_summary("no memory", &owner(), 0).unwrap().is_empty());
        assert!(parse_summary("  No Memory  ", &owner(), 0).unwrap().is_empty());
    }

    #[test]
    fn fragment_without_suffix_is_malformed() {
        let err = parse_summary("X happened (about Sam) <sep> Y happened", &owner(), 0).unwrap_err();
        assert_eq!(err, MemoryError::MalformedFragment(1));
    }

    #[test]
    fn ordinal_beyond_third_is_rejected() {
        let err = parse_summary("X (from fourth session, about Sam)", &owner(), 0).unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_ORDINAL");
    }

    #[test]
    fn me_and_myself_map_to_self() {
        let units =
            parse_summary("I like skiing (about me) <sep> I like polo (from second session, about myself).", &owner(), 0)
                .unwrap();
        assert_eq!(units[0].about, Some(About::Myself));
        assert_eq!(units[1].about, Some(About::Myself));
        assert_eq!(units[1].session_of_origin, 1);
    }

    #[test]
    fn format_renders_self_as_me() {
        let u = MemoryDraft::text(owner(), 0, "I enjoy hiking", About::Myself);
        assert_eq!(format_summary([&u]).unwrap(), "I enjoy hiking (about me)");
        assert_eq!(format_summary([]).unwrap(), "no memory");
        let m = MemoryDraft::modality(owner(), 0, ModalityKind::Audio, ItemId::new("a"), "wind");
        assert_eq!(format_summary([&m]), Err(MemoryError::NonTextUnit));
    }

    #[test]
    fn slash_delimiters_are_normalised() {
        let raw = "I surf 24/7 (about me). / Sam likes tea (about Sam)";
        let norm = normalize_delimiters(raw);
        assert_eq!(norm, "I surf 24/7 (about me) <sep> Sam likes tea (about Sam)");
        assert_eq!(parse_summary(&norm, &owner(), 0).unwrap().len(), 2);
    }

    #[test]
    fn links_are_symmetric_idempotent_and_irreflexive() {
        let mut g = MemoryGraph::new();
        let m1 = text_unit(&mut g, "one");
        let m2 = text_unit(&mut g, "two");
        assert!(g.add_link(m1, m2).unwrap());
        assert_eq!(g.neighbors(m1).unwrap(), &BTreeSet::from([m2]));
        assert_eq!(g.neighbors(m2).unwrap(), &BTreeSet::from([m1]));
        assert!(!g.add_link(m2, m1).unwrap());
        assert_eq!(g.link_count(), 1);
        assert_eq!(g.add_link(m1, m1), Err(MemoryError::SelfLink(m1)));
        assert_eq!(g.add_link(m1, MemoryId(99)), Err(MemoryError::UnknownId(MemoryId(99))));
    }

    #[test]
    fn closure_respects_depth() {
        let mut g = MemoryGraph::new();
        let m1 = text_unit(&mut g, "one");
        let m2 = text_unit(&mut g, "two");
        let m3 = text_unit(&mut g, "three");
        let lonely = text_unit(&mut g, "four");
        g.add_link(m1, m2).unwrap();
        g.add_link(m2, m3).unwrap();
        assert_eq!(g.linked_closure(m1, 1).unwrap(), BTreeSet::from([m2]));
        assert_eq!(g.linked_closure(m1, 2).unwrap(), BTreeSet::from([m2, m3]));
        assert!(g.linked_closure(lonely, 3).unwrap().is_empty());
        assert_eq!(g.linked_closure(MemoryId(42), 1), Err(MemoryError::UnknownId(MemoryId(42))));
    }

    #[test]
    fn stores_are_partitioned_by_kind() {
        let mut g = MemoryGraph::new();
        text_unit(&mut g, "t");
        let img = g
            .insert(
                MemoryDraft::modality(owner(), 0, ModalityKind::Image, ItemId::new("i"), "a cat"),
                vec1(),
            )
            .unwrap();
        g.insert(MemoryDraft::modality(owner(), 0, ModalityKind::Audio, ItemId::new("a"), "wind"), vec1())
            .unwrap();
        let images: Vec<_> = g.store(&owner(), MemoryKind::Image).map(|u| u.id).collect();
        assert_eq!(images, [img]);
        assert_eq!(g.store(&SpeakerId::new("sam"), MemoryKind::Image).count(), 0);
    }

    #[test]
    fn inconsistent_drafts_are_rejected() {
        let mut g = MemoryGraph::new();
        let mut d = MemoryDraft::text(owner(), 0, "x", About::Myself);
        d.about = None;
        assert!(matches!(g.insert(d, vec1()), Err(MemoryError::InconsistentUnit(_))));
    }

    #[test]
    fn persistence_is_stable() {
        let mut g = MemoryGraph::new();
        let a = text_unit(&mut g, "alpha");
        let b = g
            .insert(
                MemoryDraft::modality(owner(), 1, ModalityKind::Audio, ItemId::new("w"), "wind"),
                EmbeddingVector::new(vec![0.1, 0.7]).unwrap(),
            )
            .unwrap();
        g.add_link(b, a).unwrap();
        let json = g.to_json();
        let back = MemoryGraph::from_json(&json).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json(), json);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["links"], serde_json::json!([[0, 1]]));
        assert_eq!(v["units"][0]["about"], "self");
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9 ,.'!?/-]{0,60}[A-Za-z0-9.!]"
            .prop_filter("not the empty marker", |s| !s.trim().eq_ignore_ascii_case("no memory"))
    }

    fn arb_about() -> impl Strategy<Value = About> {
        prop_oneof![
            Just(About::Myself),
            "[A-Z][a-z]{1,10}( [A-Z][a-z]{1,10})?"
                .prop_filter("reserved", |s| !s.eq_ignore_ascii_case("me") && !s.eq_ignore_ascii_case("myself"))
                .prop_map(About::Person),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn parse_inverts_format(
            session in 0usize..3,
            entries in proptest::collection::vec((arb_text(), arb_about()), 1..6),
        ) {
            let units: Vec<MemoryDraft> = entries
                .into_iter()
                .map(|(t, a)| MemoryDraft::text(owner(), session, t.trim(), a))
                .collect();
            let wire = format_summary(&units).unwrap();
            let back = parse_summary(&wire, &owner(), session).unwrap();
            prop_assert_eq!(back, units);
        }
    }
}
