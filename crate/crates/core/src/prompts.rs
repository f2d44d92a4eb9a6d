//! Prompt templates.
//!
//! Templates live as text files under `prompts/` and are compiled in. Named
//! placeholders are written `{UPPER CASE NAME}`; lowercase braces such as
//! `{insert name}` or `{{name}}` are literal text meant for the model.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptId {
    CaptionRefine,
    LocationImage,
    LocationAudio,
    Scenario,
    PairAlignment,
    SessionGeneration,
    ModalityTagging,
    MemoryGeneration,
    MemoryTagging,
    EpisodeValidation,
    ConversationSystem,
    MemoryLinking,
    TurnBid,
    ModalityDecision,
    RetrievalDecision,
    Utterance,
    YesNo,
}

impl PromptId {
    pub const ALL: [PromptId; 17] = [
        PromptId::CaptionRefine,
        PromptId::LocationImage,
        PromptId::LocationAudio,
        PromptId::Scenario,
        PromptId::PairAlignment,
        PromptId::SessionGeneration,
        PromptId::ModalityTagging,
        PromptId::MemoryGeneration,
        PromptId::MemoryTagging,
        PromptId::EpisodeValidation,
        PromptId::ConversationSystem,
        PromptId::MemoryLinking,
        PromptId::TurnBid,
        PromptId::ModalityDecision,
        PromptId::RetrievalDecision,
        PromptId::Utterance,
        PromptId::YesNo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptId::CaptionRefine => "caption_refine",
            PromptId::LocationImage => "location_image",
            PromptId::LocationAudio => "location_audio",
            PromptId::Scenario => "scenario",
            PromptId::PairAlignment => "pair_alignment",
            PromptId::SessionGeneration => "session_generation",
            PromptId::ModalityTagging => "modality_tagging",
            PromptId::MemoryGeneration => "memory_generation",
            PromptId::MemoryTagging => "memory_tagging",
            PromptId::EpisodeValidation => "episode_validation",
            PromptId::ConversationSystem => "conversation_system",
            PromptId::MemoryLinking => "memory_linking",
            PromptId::TurnBid => "turn_bid",
            PromptId::ModalityDecision => "modality_decision",
            PromptId::RetrievalDecision => "retrieval_decision",
            PromptId::Utterance => "utterance",
            PromptId::YesNo => "yes_no",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn template(self) -> &'static str {
        match self {
            PromptId::CaptionRefine => include_str!("../prompts/caption_refine.txt"),
            PromptId::LocationImage => include_str!("../prompts/location_image.txt"),
            PromptId::LocationAudio => include_str!("../prompts/location_audio.txt"),
            PromptId::Scenario => include_str!("../prompts/scenario.txt"),
            PromptId::PairAlignment => include_str!("../prompts/pair_alignment.txt"),
            PromptId::SessionGeneration => include_str!("../prompts/session_generation.txt"),
            PromptId::ModalityTagging => include_str!("../prompts/modality_tagging.txt"),
            PromptId::MemoryGeneration => include_str!("../prompts/memory_generation.txt"),
            PromptId::MemoryTagging => include_str!("../prompts/memory_tagging.txt"),
            PromptId::EpisodeValidation => include_str!("../prompts/episode_validation.txt"),
            PromptId::ConversationSystem => include_str!("../prompts/conversation_system.txt"),
            PromptId::MemoryLinking => include_str!("../prompts/memory_linking.txt"),
            PromptId::TurnBid => include_str!("../prompts/turn_bid.txt"),
            PromptId::ModalityDecision => include_str!("../prompts/modality_decision.txt"),
            PromptId::RetrievalDecision => include_str!("../prompts/retrieval_decision.txt"),
            PromptId::Utterance => include_str!("../prompts/utterance.txt"),
            PromptId::YesNo => include_str!("../prompts/yes_no.txt"),
        }
    }

    pub fn placeholders(self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = placeholder_re()
            .captures_iter(self.template())
            .map(|c| c.get(1).expect("group").as_str())
            .collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    pub fn render(self, vars: &Vars) -> Result<String, PromptError> {
        render(self.template(), vars).map_err(|missing| PromptError::Missing {
            prompt: self.name(),
            placeholder: missing,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt {prompt} needs a value for {{{placeholder}}}")]
    Missing { prompt: &'static str, placeholder: String },
}

/// Placeholder substitutions, keyed by placeholder name.
pub type Vars = BTreeMap<String, String>;

pub fn vars<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> Vars {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Z][A-Z0-9 ]*)\}").expect("valid regex"))
}

fn render(template: &str, vars: &Vars) -> Result<String, String> {
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for caps in placeholder_re().captures_iter(template) {
        let whole = caps.get(0).expect("match");
        let name = &caps[1];
        let value = vars.get(name).ok_or_else(|| name.to_owned())?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// "first", "second", "third", then "4th", "5th", ...
pub fn ordinal_word(index: usize) -> String {
    match index {
        0 => "first".into(),
        1 => "second".into(),
        2 => "third".into(),
        n => format!("{}th", n + 1),
    }
}

/// Bijective base-26 utterance label: 0 → "A", 25 → "Z", 26 → "AA".
pub fn letter_label(index: usize) -> String {
    let mut n = index + 1;
    let mut out = Vec::new();
    while n > 0 {
        n -= 1;
        out.push(b'A' + (n % 26) as u8);
        n /= 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

/// Inverse of [`letter_label`]; `None` on anything but uppercase ASCII letters.
pub fn parse_letter_label(label: &str) -> Option<usize> {
    if label.is_empty() || !label.bytes().all(|b| b.is_ascii_uppercase()) {
        return None;
    }
    let mut n: usize = 0;
    for b in label.bytes() {
        n = n.checked_mul(26)?.checked_add((b - b'A') as usize + 1)?;
    }
    Some(n - 1)
}

/// The six consistency questions asked of every generated episode, in order.
pub fn consistency_questions() -> Vec<&'static str> {
    include_str!("../prompts/consistency_questions.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
