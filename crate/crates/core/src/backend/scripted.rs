//! Offline, fixture-driven backend.
//!
//! A [`Script`] lists canned replies keyed by (session, turn, speaker) plus
//! substring rules for judges. Anything not scripted falls back to a seeded
//! synthesizer, so a `ScriptedBackend` with an empty script can drive the
//! whole engine and the dataset pipeline. Every reply is a pure function of
//! the request and the seed.

use serde::{Deserialize, Serialize};

use super::{AgentBackend, BackendError, Completion, CompletionRequest};
use crate::model::TimeInterval;
use crate::prompts::{letter_label, PromptId};
use crate::rng::{fnv1a64, mix64, SplitMix64};

/// A canned reply. Absent keys match anything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
    /// Speaker id; for summaries, the perspective id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probability: Option<f64>,
}

impl Reply {
    pub fn new(output: impl Into<String>) -> Self {
        Self { output: output.into(), ..Self::default() }
    }

    pub fn at(mut self, session: usize, turn: usize) -> Self {
        self.session = Some(session);
        self.turn = Some(turn);
        self
    }

    pub fn in_session(mut self, session: usize) -> Self {
        self.session = Some(session);
        self
    }

    pub fn by(mut self, speaker: impl Into<String>) -> Self {
        self.speaker = Some(speaker.into());
        self
    }

    fn matches(&self, req: &CompletionRequest, speaker_key: &str) -> bool {
        let num = |key: &str, want: Option<usize>| match want {
            None => true,
            Some(w) => req.var(key).and_then(|v| v.parse::<usize>().ok()) == Some(w),
        };
        num("session", self.session)
            && num("turn", self.turn)
            && self.speaker.as_deref().is_none_or(|s| req.var(speaker_key) == Some(s))
    }
}

/// Substring rule. Every present pattern must occur (case-insensitively).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// For links: one memory must contain `a` and the other `b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<String>,
    /// For judges: matched against the question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    /// For judges: matched against the material.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<String>,
    /// For raw prompt overrides: matched against the rendered user text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub output: String,
}

fn has(haystack: &str, needle: &Option<String>) -> bool {
    needle
        .as_deref()
        .is_none_or(|n| haystack.to_lowercase().contains(&n.to_lowercase()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BidPolicy {
    /// Each agent bids yes with probability `bid_rate`, seeded.
    #[default]
    Seeded,
    /// Nobody ever bids, so the main speaker always holds the floor.
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalPolicy {
    Never,
    /// From the second session on, retrieve with probability `retrieval_rate`.
    #[default]
    Seeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkPolicy {
    Never,
    /// Link when the word sets overlap by at least `link_threshold` (Jaccard).
    #[default]
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Policy {
    pub bid: BidPolicy,
    pub bid_rate: f64,
    /// Whether the main speaker volunteers pending modality items.
    pub volunteer_modality: bool,
    pub retrieval: RetrievalPolicy,
    pub retrieval_rate: f64,
    pub link: LinkPolicy,
    pub link_threshold: f64,
    /// Answer to judge questions no rule covers.
    pub judge: String,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            bid: BidPolicy::Seeded,
            bid_rate: 0.8,
            volunteer_modality: false,
            retrieval: RetrievalPolicy::Seeded,
            retrieval_rate: 0.3,
            link: LinkPolicy::Overlap,
            link_threshold: 0.2,
            judge: "Yes".into(),
        }
    }
}

/// Fixture for [`ScriptedBackend`]; loadable from JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Script {
    pub bids: Vec<Reply>,
    pub modality: Vec<Reply>,
    pub retrievals: Vec<Reply>,
    pub utterances: Vec<Reply>,
    pub summaries: Vec<Reply>,
    pub links: Vec<Rule>,
    pub judgments: Vec<Rule>,
    /// Raw overrides keyed by prompt name, checked before anything else.
    pub completions: Vec<Rule>,
    pub policy: Policy,
}

impl Script {
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        serde_json::from_str(text).map_err(|e| BackendError::Config(format!("script: {e}")))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    script: Script,
    seed: u64,
}

const NAMES: [&str; 20] = [
    "Alex", "Jamie", "Taylor", "Morgan", "Riley", "Casey", "Jordan", "Avery", "Quinn", "Parker", "Rowan", "Skyler",
    "Emerson", "Hayden", "Reese", "Sage", "Dakota", "Finley", "Harper", "Logan",
];

const RELATIONSHIPS: [&str; 8] = [
    "close friend",
    "coworker",
    "neighbor",
    "cousin",
    "college roommate",
    "teammate",
    "sibling",
    "classmate",
];

const SMALL_TALK: [&str; 14] = [
    "How has your week been so far?",
    "I was hoping we would get some time together like this.",
    "Should we grab something to eat after this?",
    "That sounds like a plan to me.",
    "I have been meaning to ask you about your new project.",
    "It's been busy, but good busy.",
    "Honestly, I could stay here all afternoon.",
    "Did you end up finishing that book?",
    "We should do this more often.",
    "I'm glad you suggested coming here.",
    "What do you think we should do next?",
    "You always find the best spots.",
    "I'm with you on that one.",
    "Let's not rush, we have plenty of time.",
];

const LOCATIONS: [&str; 24] = [
    "kitchen", "beach", "park", "street", "office", "forest", "restaurant", "cafe", "mountain", "river", "lake",
    "garden", "station", "airport", "stadium", "classroom", "library", "market", "farm", "city", "field", "bedroom",
    "living", "bathroom",
];

impl ScriptedBackend {
    pub fn new(script: Script, seed: u64) -> Self {
        Self { script, seed }
    }

    pub fn seeded(seed: u64) -> Self {
        Self::new(Script::default(), seed)
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    fn hash(&self, parts: &[&str]) -> u64 {
        mix64(self.seed ^ fnv1a64(parts.join("\u{1f}").as_bytes()))
    }

    fn unit(&self, parts: &[&str]) -> f64 {
        (self.hash(parts) >> 11) as f64 / (1u64 << 53) as f64
    }

    fn meta<'a>(req: &'a CompletionRequest, key: &str) -> &'a str {
        req.var(key).unwrap_or("")
    }

    fn json_list(req: &CompletionRequest, key: &str) -> Vec<String> {
        req.var(key).and_then(|v| serde_json::from_str(v).ok()).unwrap_or_default()
    }

    fn pick<'r>(replies: &'r [Reply], req: &CompletionRequest, speaker_key: &str) -> Option<&'r Reply> {
        replies.iter().find(|r| r.matches(req, speaker_key))
    }

    fn synth_bid(&self, req: &CompletionRequest) -> String {
        let nonce = req.nonce.to_string();
        let key = [Self::meta(req, "session"), Self::meta(req, "turn"), Self::meta(req, "speaker"), &nonce];
        match self.script.policy.bid {
            BidPolicy::Never => "[NO]".into(),
            BidPolicy::Seeded => {
                if self.unit(&[&key[..], &["bid"]].concat()) < self.script.policy.bid_rate {
                    format!("[YES] {:.3}", self.unit(&[&key[..], &["p"]].concat()))
                } else {
                    "[NO]".into()
                }
            }
        }
    }

    fn synth_retrieval(&self, req: &CompletionRequest) -> String {
        let session = Self::meta(req, "session");
        if self.script.policy.retrieval == RetrievalPolicy::Never || session == "0" {
            return "[NO_RET]".into();
        }
        let key = [session, Self::meta(req, "turn"), Self::meta(req, "speaker")];
        if self.unit(&[&key[..], &["ret"]].concat()) >= self.script.policy.retrieval_rate {
            return "[NO_RET]".into();
        }
        if self.hash(&[&key[..], &["kind"]].concat()) % 2 == 0 {
            "[RET_IMG]".into()
        } else {
            "[RET_AUDIO]".into()
        }
    }

    fn synth_utterance(&self, req: &CompletionRequest) -> String {
        let h = self.hash(&[Self::meta(req, "session"), Self::meta(req, "turn"), Self::meta(req, "speaker"), "say"]);
        if let Some(recalled) = req.var("recalled") {
            return format!("This reminds me of something: {}.", sentence_body(recalled));
        }
        if Self::meta(req, "turn") == "0" {
            if let Some(opening) = req.var("opening") {
                return format!("I was just remembering that {}.", lower_first(&sentence_body(opening)));
            }
        }
        if let Some(caption) = req.var("latest_caption") {
            if h % 3 == 0 {
                return format!("Look at that, {}.", lower_first(&sentence_body(caption)));
            }
        }
        SMALL_TALK[(h % SMALL_TALK.len() as u64) as usize].to_owned()
    }

    fn synth_summary(&self, req: &CompletionRequest) -> String {
        let others: Vec<&str> = Self::meta(req, "others").split('|').filter(|s| !s.is_empty()).collect();
        let first = sentence_body(Self::meta(req, "FIRST SETTING"));
        let second = sentence_body(Self::meta(req, "SECOND SETTING"));
        let mut parts = vec![format!("I enjoyed sharing the moment when {} (about me).", lower_first(&first))];
        if let Some(p) = others.first() {
            parts.push(format!("{p} was curious about how {} (about {p}).", lower_first(&second)));
        }
        if let Some(p) = others.get(1) {
            parts.push(format!("{p} wants to meet up again soon (about {p})."));
        }
        parts.join(" / ")
    }

    fn synth_link(&self, req: &CompletionRequest) -> String {
        let verdict = match self.script.policy.link {
            LinkPolicy::Never => false,
            LinkPolicy::Overlap => {
                jaccard(Self::meta(req, "MEMORY 1"), Self::meta(req, "MEMORY 2")) >= self.script.policy.link_threshold
            }
        };
        if verdict { "[POSITIVE]" } else { "[NEGATIVE]" }.into()
    }

    fn synth_scenario(&self, req: &CompletionRequest) -> String {
        let n: usize = Self::meta(req, "setting_count").parse().unwrap_or(0);
        let mut rng = SplitMix64::new(self.hash(&["scenario", &req.nonce.to_string()]));
        let mut names: Vec<&str> = NAMES.to_vec();
        rng.shuffle(&mut names);
        let mut scenes: Vec<usize> = (1..=n).collect();
        rng.shuffle(&mut scenes);
        let mut pairs = [(0usize, 1usize), (1, 2), (0, 2)];
        rng.shuffle(&mut pairs);
        let partners = [names[1], names[2], names[3]];
        let rel = |r: &mut SplitMix64| RELATIONSHIPS[r.below(RELATIONSHIPS.len() as u64) as usize];
        let interval = |r: &mut SplitMix64| TimeInterval::ALL[r.below(5) as usize].phrase();
        let scene = |i: usize| scenes.get(i).copied().unwrap_or(1);
        let mut out = String::new();
        out.push_str(&format!("- Main speaker name: {}\n", names[0]));
        out.push_str(&format!("- Main speaker relationship: {}\n", rel(&mut rng)));
        for (i, p) in partners.iter().enumerate() {
            out.push_str(&format!("- Partner {} name: {p}\n", i + 1));
            out.push_str(&format!("- Partner {} relationship: {}\n", i + 1, rel(&mut rng)));
        }
        for s in 0..3 {
            out.push_str(&format!("- Scene numbers for session {}: {}, {}\n", s + 1, scene(2 * s), scene(2 * s + 1)));
            let (a, b) = pairs[s];
            out.push_str(&format!("- Two partners' names in Scene {}: {}, {}\n", s + 1, partners[a], partners[b]));
            if s < 2 {
                out.push_str(&format!("- Time interval between session {} and {}: {}\n", s + 1, s + 2, interval(&mut rng)));
            }
        }
        out
    }

    fn synth_session(&self, req: &CompletionRequest) -> String {
        let main = Self::meta(req, "MAIN SPEAKER NAME");
        let speakers = [main, Self::meta(req, "PARTNER 1 NAME"), Self::meta(req, "PARTNER 2 NAME")];
        let captions = [sentence_body(Self::meta(req, "CAPTION 1")), sentence_body(Self::meta(req, "CAPTION 2"))];
        let memories = Self::json_list(req, "memories");
        let mut rng = SplitMix64::new(self.hash(&["session", Self::meta(req, "session"), &req.nonce.to_string()]));
        let len = 12 + rng.below(5) as usize;
        let first_mention = 1 + rng.below(3) as usize;
        let second_mention = first_mention + 3 + rng.below((len - first_mention - 5) as u64) as usize;

        let mut order = vec![1 + rng.below(2) as usize];
        while order.len() < len {
            let prev = *order.last().expect("non-empty");
            let next = (prev + 1 + rng.below(2) as usize) % 3;
            order.push(next);
        }
        let main_slots: Vec<usize> = (0..len)
            .filter(|&i| order[i] == 0 && i != first_mention && i != second_mention)
            .collect();
        let mut recall_at = Vec::new();
        if !memories.is_empty() {
            recall_at.extend(main_slots.iter().take(2).copied());
        }

        let mut lines = Vec::with_capacity(len);
        for (i, &who) in order.iter().enumerate() {
            let text = if i == first_mention {
                format!("Oh, look, {}.", lower_first(&captions[0]))
            } else if i == second_mention {
                format!("And now {}.", lower_first(&captions[1]))
            } else if let Some(k) = recall_at.iter().position(|&r| r == i) {
                let m = &memories[(rng.below(memories.len() as u64) as usize + k) % memories.len()];
                format!("I remember this: {}.", sentence_body(m))
            } else {
                SMALL_TALK[rng.below(SMALL_TALK.len() as u64) as usize].to_owned()
            };
            lines.push(format!("[{}] {}", speakers[who], text));
        }
        lines.join("\n")
    }

    fn synth_modality_tags(&self, req: &CompletionRequest) -> String {
        let utterances = Self::json_list(req, "utterances");
        let find = |caption: &str, skip: Option<usize>| {
            let needle = lower_first(&sentence_body(caption)).to_lowercase();
            utterances
                .iter()
                .enumerate()
                .position(|(i, u)| Some(i) != skip && u.to_lowercase().contains(&needle))
        };
        let a = find(Self::meta(req, "CAPTION A"), None).unwrap_or(0);
        let b = find(Self::meta(req, "CAPTION B"), Some(a)).unwrap_or(if a == 1 { 0 } else { 1 });
        format!("Settings at utterance {} and {}", a + 1, b + 1)
    }

    fn synth_memory_tags(&self, req: &CompletionRequest) -> String {
        let utterances = Self::json_list(req, "utterances");
        let memories = Self::json_list(req, "memories");
        let mut lines = Vec::new();
        for (i, u) in utterances.iter().enumerate() {
            let u = u.to_lowercase();
            for (j, m) in memories.iter().enumerate() {
                let body = sentence_body(m).to_lowercase();
                if !body.is_empty() && u.contains(&body) {
                    lines.push(format!("{}-{}", letter_label(i), j + 1));
                }
            }
        }
        if lines.is_empty() {
            "none".into()
        } else {
            lines.join("\n")
        }
    }

    fn synth_location(&self, req: &CompletionRequest, audio: bool) -> String {
        let caption = Self::meta(req, "CAPTION").to_lowercase();
        let words: Vec<&str> = caption.split(|c: char| !c.is_alphanumeric()).collect();
        match LOCATIONS.iter().find(|l| words.contains(l)) {
            Some(l) => (*l).to_owned(),
            None if audio => "none".into(),
            None => "outdoors".into(),
        }
    }

    fn judge(&self, req: &CompletionRequest) -> String {
        let (q, m) = (Self::meta(req, "QUESTION"), Self::meta(req, "MATERIAL"));
        self.script
            .judgments
            .iter()
            .find(|r| has(q, &r.question) && has(m, &r.material))
            .map(|r| r.output.clone())
            .unwrap_or_else(|| self.script.policy.judge.clone())
    }

    fn link(&self, req: &CompletionRequest) -> String {
        let (x, y) = (Self::meta(req, "MEMORY 1"), Self::meta(req, "MEMORY 2"));
        let hit = |r: &Rule| (has(x, &r.a) && has(y, &r.b)) || (has(y, &r.a) && has(x, &r.b));
        match self.script.links.iter().find(|r| hit(r)) {
            Some(r) => r.output.clone(),
            None => self.synth_link(req),
        }
    }
}

impl AgentBackend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, BackendError> {
        if let Some(rule) = self
            .script
            .completions
            .iter()
            .find(|r| r.prompt.as_deref().is_none_or(|p| p == req.prompt) && has(&req.user, &r.contains))
        {
            return Ok(Completion::text(rule.output.clone()));
        }
        let scripted = |list: &[Reply], key: &str| {
            Self::pick(list, req, key).map(|r| Completion { text: r.output.clone(), token_probability: r.token_probability })
        };
        let Some(prompt) = req.prompt_id() else {
            return Err(BackendError::Protocol { raw: req.prompt.clone(), expected: "a known prompt id" });
        };
        let out = match prompt {
            PromptId::TurnBid => scripted(&self.script.bids, "speaker").unwrap_or_else(|| Completion::text(self.synth_bid(req))),
            PromptId::ModalityDecision => scripted(&self.script.modality, "speaker").unwrap_or_else(|| {
                Completion::text(if self.script.policy.volunteer_modality { "[YES]" } else { "[NO]" })
            }),
            PromptId::RetrievalDecision => {
                scripted(&self.script.retrievals, "speaker").unwrap_or_else(|| Completion::text(self.synth_retrieval(req)))
            }
            PromptId::Utterance => {
                scripted(&self.script.utterances, "speaker").unwrap_or_else(|| Completion::text(self.synth_utterance(req)))
            }
            PromptId::MemoryGeneration => {
                scripted(&self.script.summaries, "perspective").unwrap_or_else(|| Completion::text(self.synth_summary(req)))
            }
            PromptId::MemoryLinking => Completion::text(self.link(req)),
            PromptId::YesNo => Completion::text(self.judge(req)),
            PromptId::Scenario => Completion::text(self.synth_scenario(req)),
            PromptId::SessionGeneration => Completion::text(self.synth_session(req)),
            PromptId::ModalityTagging => Completion::text(self.synth_modality_tags(req)),
            PromptId::MemoryTagging => Completion::text(self.synth_memory_tags(req)),
            PromptId::CaptionRefine => Completion::text(Self::meta(req, "CAPTION")),
            PromptId::LocationImage => Completion::text(self.synth_location(req, false)),
            PromptId::LocationAudio => Completion::text(self.synth_location(req, true)),
            PromptId::PairAlignment | PromptId::EpisodeValidation | PromptId::ConversationSystem => {
                return Err(BackendError::Protocol { raw: req.prompt.clone(), expected: "a prompt sent as a user turn" })
            }
        };
        Ok(out)
    }
}

/// Text with trailing punctuation and parentheses removed, so it can be
/// embedded in a generated sentence or attribution fragment.
fn sentence_body(s: &str) -> String {
    s.replace(['(', ')', '/'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end_matches(['.', '!', '?', ','])
        .to_owned()
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn jaccard(a: &str, b: &str) -> f64 {
    use std::collections::BTreeSet;
    let words = |s: &str| -> BTreeSet<String> {
        s.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.len() > 2)
            .map(str::to_owned)
            .collect()
    };
    let (x, y) = (words(a), words(b));
    let union = x.union(&y).count();
    if union == 0 {
        return 0.0;
    }
    x.intersection(&y).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::Vars;

    fn req(prompt: PromptId, pairs: &[(&str, &str)], nonce: u64) -> CompletionRequest {
        let vars: Vars = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let user = prompt.template().to_owned();
        CompletionRequest { prompt: prompt.name().into(), vars, system: None, user, nonce }
    }

    #[test]
    fn keyed_reply_beats_synthesizer() {
        let script = Script {
            bids: vec![Reply::new("[YES]").at(0, 3).by("B")],
            ..Script::default()
        };
        let mut r = Reply::new("[YES]").at(0, 3).by("B");
        r.token_probability = Some(0.9);
        let script_p = Script { bids: vec![r], ..Script::default() };
        let b = ScriptedBackend::new(script, 1);
        let hit = req(PromptId::TurnBid, &[("session", "0"), ("turn", "3"), ("speaker", "B")], 0);
        assert_eq!(b.complete(&hit).unwrap().text, "[YES]");
        let bp = ScriptedBackend::new(script_p, 1);
        assert_eq!(bp.complete(&hit).unwrap().token_probability, Some(0.9));
        let miss = req(PromptId::TurnBid, &[("session", "0"), ("turn", "4"), ("speaker", "B")], 0);
        let out = b.complete(&miss).unwrap().text;
        assert!(out.starts_with("[YES] ") || out == "[NO]", "{out}");
    }

    #[test]
    fn same_seed_same_answers() {
        let r = req(PromptId::TurnBid, &[("session", "1"), ("turn", "2"), ("speaker", "C")], 5);
        let a = ScriptedBackend::seeded(9).complete(&r).unwrap();
        let b = ScriptedBackend::seeded(9).complete(&r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn judge_rules_match_substrings() {
        let script = Script {
            judgments: vec![Rule { question: Some("realistic".into()), material: Some("ski".into()), output: "No".into(), ..Rule::default() }],
            ..Script::default()
        };
        let b = ScriptedBackend::new(script, 0);
        assert!(!b.judge_yes_no("Is it REALISTIC?", "a ski slope").unwrap());
        assert!(b.judge_yes_no("Is it realistic?", "a meadow").unwrap());
    }

    #[test]
    fn link_rules_are_order_insensitive() {
        let script = Script {
            links: vec![Rule { a: Some("wind".into()), b: Some("hat".into()), output: "[POSITIVE]".into(), ..Rule::default() }],
            policy: Policy { link: LinkPolicy::Never, ..Policy::default() },
            ..Script::default()
        };
        let b = ScriptedBackend::new(script, 0);
        assert!(b.judge_link("hold your hat", "strong wind").unwrap());
        assert!(!b.judge_link("hold your hat", "rain").unwrap());
    }

    #[test]
    fn script_from_json() {
        let s = Script::from_json(r#"{"bids":[{"session":0,"turn":1,"speaker":"A","output":"[NO]"}],"policy":{"bid":"never"}}"#).unwrap();
        assert_eq!(s.bids.len(), 1);
        assert_eq!(s.policy.bid, BidPolicy::Never);
        assert_eq!(s.policy.judge, "Yes");
    }

    #[test]
    fn synthesized_session_mentions_captions() {
        let b = ScriptedBackend::seeded(3);
        let r = req(
            PromptId::SessionGeneration,
            &[
                ("MAIN SPEAKER NAME", "Alex"),
                ("PARTNER 1 NAME", "Jamie"),
                ("PARTNER 2 NAME", "Taylor"),
                ("CAPTION 1", "A dog chases a red ball."),
                ("CAPTION 2", "Waves crash on the shore."),
                ("memories", r#"["Jamie plays the guitar (about Jamie)"]"#),
                ("session", "1"),
            ],
            0,
        );
        let text = b.complete(&r).unwrap().text;
        let lines: Vec<&str> = text.lines().collect();
        assert!((12..=16).contains(&lines.len()));
        assert!(!lines[0].starts_with("[Alex]"));
        assert!(text.contains("a dog chases a red ball"));
        assert!(text.contains("waves crash on the shore"));
        assert!(text.contains("Jamie plays the guitar"));
    }

    #[test]
    fn jaccard_overlap() {
        assert_eq!(jaccard("the wind blows", "the wind blows"), 1.0);
        assert_eq!(jaccard("", ""), 0.0);
        assert!(jaccard("strong wind outside", "wind might blow your hat") > 0.0);
    }
}
