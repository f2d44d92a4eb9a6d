//! Contracts through which the engine consumes generation, judging and
//! embedding, plus the offline and HTTP implementations.
//!
//! Every agent decision is phrased as one prompt rendered from a template and
//! sent through [`AgentBackend::complete`]. The provided trait methods build
//! the prompt, call `complete`, and map the raw text onto the token grammar in
//! [`protocol`]. Implementations normally only provide `complete`.

mod embed;
pub mod protocol;
mod recording;
mod remote;
mod scripted;
mod spec;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{normalize_delimiters, MemoryKind};
use crate::model::{render_modality, render_turns, EmbeddingVector, ItemId, ModalityItem, SpeakerId, SpeakerProfile, Turn};
use crate::prompts::{ordinal_word, PromptError, PromptId, Vars};
use crate::retrieval::RetrievalResult;

pub use embed::{det_embed_text, DeterministicEmbedder, DEFAULT_DIM};
pub use recording::{ProvenanceRecord, RecordingBackend};
pub use remote::{remote_call, ChatMessage, RemoteBackend, RemoteConfig, RemoteEmbedder, Role, KEY_ENV};
pub use scripted::{BidPolicy, LinkPolicy, Policy, Reply, RetrievalPolicy, Rule, Script, ScriptedBackend};
pub use spec::{BackendKind, BackendSpec, EmbedderKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("TRANSPORT: {0}")]
    Transport(String),
    #[error("BACKEND_PROTOCOL: expected {expected}, got {raw:?}")]
    Protocol { raw: String, expected: &'static str },
    #[error("TIMEOUT: {0}")]
    Timeout(String),
    #[error("CONFIG: {0}")]
    Config(String),
    #[error("PROMPT: {0}")]
    Prompt(#[from] PromptError),
}

impl BackendError {
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::Transport(_) => "TRANSPORT",
            BackendError::Protocol { .. } => "BACKEND_PROTOCOL",
            BackendError::Timeout(_) => "TIMEOUT",
            BackendError::Config(_) => "CONFIG",
            BackendError::Prompt(_) => "PROMPT",
        }
    }
}

/// A speaker's bid for the next turn. The probability is present exactly when
/// the speaker wants the turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnBid {
    wants_turn: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probability: Option<f64>,
}

impl TurnBid {
    /// `None` unless `p` is a finite value in `[0, 1]`.
    pub fn yes(p: f64) -> Option<Self> {
        (p.is_finite() && (0.0..=1.0).contains(&p)).then_some(Self { wants_turn: true, probability: Some(p) })
    }

    pub fn no() -> Self {
        Self { wants_turn: false, probability: None }
    }

    pub fn wants_turn(&self) -> bool {
        self.wants_turn
    }

    pub fn probability(&self) -> Option<f64> {
        self.probability
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RetrievalDecision {
    #[serde(rename = "RET_IMG")]
    RetImg,
    #[serde(rename = "RET_AUDIO")]
    RetAudio,
    #[serde(rename = "NO_RET")]
    NoRet,
}

impl RetrievalDecision {
    pub fn kind(self) -> Option<MemoryKind> {
        match self {
            RetrievalDecision::RetImg => Some(MemoryKind::Image),
            RetrievalDecision::RetAudio => Some(MemoryKind::Audio),
            RetrievalDecision::NoRet => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            RetrievalDecision::RetImg => "[RET_IMG]",
            RetrievalDecision::RetAudio => "[RET_AUDIO]",
            RetrievalDecision::NoRet => "[NO_RET]",
        }
    }
}

/// One rendered prompt. `vars` holds the template substitutions and, under
/// lowercase keys, metadata (session, turn, speaker ...) that never appears in
/// the prompt text but lets scripted backends key their answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub vars: Vars,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    pub nonce: u64,
}

impl CompletionRequest {
    pub fn render(prompt: PromptId, vars: Vars, nonce: u64) -> Result<Self, BackendError> {
        let user = prompt.render(&vars)?;
        Ok(Self { prompt: prompt.name().to_owned(), vars, system: None, user, nonce })
    }

    pub fn prompt_id(&self) -> Option<PromptId> {
        PromptId::from_name(&self.prompt)
    }

    pub fn var(&self, key: &str) -> Option<&str> {
        self.vars.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Likelihood of the first answer token, when the backend reports it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probability: Option<f64>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), token_probability: None }
    }
}

/// What an agent sees when deciding or speaking.
#[derive(Debug, Clone, Copy)]
pub struct TurnContext<'a> {
    pub session_index: usize,
    pub turn_index: usize,
    /// The agent being asked.
    pub speaker: &'a SpeakerProfile,
    /// Main speaker first, then the two partners.
    pub participants: &'a [SpeakerProfile],
    pub turns: &'a [Turn],
    pub items: &'a BTreeMap<ItemId, ModalityItem>,
    /// Item appearing at this turn, before anyone speaks.
    pub incoming: Option<&'a ModalityItem>,
    /// Next unintroduced slot, offered to the main speaker.
    pub pending_item: Option<&'a ModalityItem>,
    /// Text memory recalled at session start.
    pub opening_memory: Option<&'a RetrievalResult>,
    pub nonce: u64,
}

impl TurnContext<'_> {
    pub fn transcript(&self) -> String {
        let names: BTreeMap<SpeakerId, String> =
            self.participants.iter().map(|p| (p.id.clone(), p.name.clone())).collect();
        let mut out = render_turns(self.turns, &names, self.items);
        if let Some(item) = self.incoming {
            out.push_str(&render_modality(item));
            out.push('\n');
        }
        out
    }

    /// Captions of items visible so far, in order of appearance.
    pub fn perceived(&self) -> Vec<&ModalityItem> {
        self.turns
            .iter()
            .filter_map(|t| t.introduces.as_ref())
            .filter_map(|id| self.items.get(id))
            .chain(self.incoming)
            .collect()
    }

    fn base_vars(&self) -> Vars {
        let mut v = Vars::new();
        v.insert("session".into(), self.session_index.to_string());
        v.insert("turn".into(), self.turn_index.to_string());
        v.insert("speaker".into(), self.speaker.id.to_string());
        v.insert("TRANSCRIPT".into(), self.transcript());
        v.insert("SPEAKER NAME".into(), self.speaker.name.clone());
        v
    }
}

/// Input to the end-of-session summariser.
#[derive(Debug, Clone)]
pub struct SummaryRequest<'a> {
    pub session_index: usize,
    pub perspective: &'a SpeakerProfile,
    pub others: Vec<&'a SpeakerProfile>,
    pub transcript: String,
    pub settings: [&'a ModalityItem; 2],
    pub nonce: u64,
}

fn memory_block(memories: &[&RetrievalResult]) -> String {
    let mut out = String::new();
    for r in memories {
        out.push_str(" [MEMORY] ");
        out.push_str(&r.unit.text);
        for linked in &r.expansion {
            out.push_str(" [LINKED] ");
            out.push_str(&linked.text);
        }
    }
    out
}

pub trait AgentBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;

    /// Whether `complete` reports the likelihood of the answer token. When it
    /// does not, turn-bid prompts ask for a self-reported confidence instead.
    fn reports_token_probability(&self) -> bool {
        false
    }

    fn decide_turn(&self, ctx: &TurnContext<'_>) -> Result<TurnBid, BackendError> {
        let mut vars = ctx.base_vars();
        let confidence = if self.reports_token_probability() {
            String::new()
        } else {
            " If you answer [YES], follow it with your confidence between 0 and 1, for example \"[YES] 0.7\".".into()
        };
        vars.insert("CONFIDENCE".into(), confidence);
        let out = self.complete(&CompletionRequest::render(PromptId::TurnBid, vars, ctx.nonce)?)?;
        protocol::parse_turn_bid(&out.text, out.token_probability)
    }

    /// Main speaker only: should the pending item appear at this turn.
    fn decide_modality(&self, ctx: &TurnContext<'_>) -> Result<bool, BackendError> {
        let Some(item) = ctx.pending_item else {
            return Ok(false);
        };
        let mut vars = ctx.base_vars();
        vars.insert("CAPTION".into(), item.caption.clone());
        let out = self.complete(&CompletionRequest::render(PromptId::ModalityDecision, vars, ctx.nonce)?)?;
        protocol::parse_yes_no_token(&out.text)
    }

    fn decide_retrieval(&self, ctx: &TurnContext<'_>) -> Result<RetrievalDecision, BackendError> {
        let out = self.complete(&CompletionRequest::render(PromptId::RetrievalDecision, ctx.base_vars(), ctx.nonce)?)?;
        protocol::parse_retrieval(&out.text)
    }

    fn generate_utterance(
        &self,
        ctx: &TurnContext<'_>,
        retrieved: Option<&RetrievalResult>,
    ) -> Result<String, BackendError> {
        let subs: Vec<String> = ctx
            .participants
            .iter()
            .filter(|p| p.id != ctx.speaker.id)
            .map(|p| format!("[{}]-{}", p.name, p.relationship))
            .collect();
        let memories: Vec<&RetrievalResult> = ctx.opening_memory.into_iter().chain(retrieved).collect();
        let mut sys_vars = Vars::new();
        sys_vars.insert("MAIN SPEAKER NAME".into(), ctx.speaker.name.clone());
        sys_vars.insert("MAIN SPEAKER JOB".into(), ctx.speaker.relationship.clone());
        sys_vars.insert("SUB SPEAKERS".into(), subs.join(" "));
        sys_vars.insert("MEMORY".into(), memory_block(&memories));
        let system = PromptId::ConversationSystem.render(&sys_vars)?;

        let mut vars = ctx.base_vars();
        if let Some(item) = ctx.perceived().last() {
            vars.insert("latest_caption".into(), item.caption.clone());
        }
        if let Some(r) = retrieved {
            vars.insert("recalled".into(), r.unit.text.clone());
        }
        if let Some(r) = ctx.opening_memory {
            vars.insert("opening".into(), r.unit.text.clone());
        }
        let mut request = CompletionRequest::render(PromptId::Utterance, vars, ctx.nonce)?;
        request.system = Some(system);
        let out = self.complete(&request)?;
        protocol::clean_utterance(&out.text, &ctx.speaker.name)
    }

    /// Raw summary with `/` delimiters normalised to `<sep>`.
    fn summarize(&self, req: &SummaryRequest<'_>) -> Result<String, BackendError> {
        let mut vars = Vars::new();
        vars.insert("session".into(), req.session_index.to_string());
        vars.insert("perspective".into(), req.perspective.id.to_string());
        vars.insert(
            "others".into(),
            req.others.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join("|"),
        );
        vars.insert("SESSION ORDINAL".into(), crate::prompts::capitalize(&ordinal_word(req.session_index)));
        vars.insert("FIRST SETTING".into(), req.settings[0].caption.clone());
        vars.insert("SECOND SETTING".into(), req.settings[1].caption.clone());
        vars.insert("SESSION CONVERSATION".into(), req.transcript.clone());
        vars.insert("MAIN SPEAKER NAME".into(), req.perspective.name.clone());
        let out = self.complete(&CompletionRequest::render(PromptId::MemoryGeneration, vars, req.nonce)?)?;
        Ok(normalize_delimiters(&out.text))
    }

    fn judge_link(&self, memory_a: &str, memory_b: &str) -> Result<bool, BackendError> {
        let mut vars = Vars::new();
        vars.insert("MEMORY 1".into(), memory_a.to_owned());
        vars.insert("MEMORY 2".into(), memory_b.to_owned());
        let out = self.complete(&CompletionRequest::render(PromptId::MemoryLinking, vars, 0)?)?;
        protocol::parse_link_verdict(&out.text)
    }

    fn judge_yes_no(&self, question: &str, material: &str) -> Result<bool, BackendError> {
        let mut vars = Vars::new();
        vars.insert("QUESTION".into(), question.to_owned());
        vars.insert("MATERIAL".into(), material.to_owned());
        let out = self.complete(&CompletionRequest::render(PromptId::YesNo, vars, 0)?)?;
        protocol::parse_yes_no(&out.text)
    }
}

impl<T: AgentBackend + ?Sized> AgentBackend for std::sync::Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
    fn reports_token_probability(&self) -> bool {
        (**self).reports_token_probability()
    }
    fn decide_turn(&self, ctx: &TurnContext<'_>) -> Result<TurnBid, BackendError> {
        (**self).decide_turn(ctx)
    }
    fn decide_modality(&self, ctx: &TurnContext<'_>) -> Result<bool, BackendError> {
        (**self).decide_modality(ctx)
    }
    fn decide_retrieval(&self, ctx: &TurnContext<'_>) -> Result<RetrievalDecision, BackendError> {
        (**self).decide_retrieval(ctx)
    }
    fn generate_utterance(&self, ctx: &TurnContext<'_>, r: Option<&RetrievalResult>) -> Result<String, BackendError> {
        (**self).generate_utterance(ctx, r)
    }
    fn summarize(&self, req: &SummaryRequest<'_>) -> Result<String, BackendError> {
        (**self).summarize(req)
    }
    fn judge_link(&self, a: &str, b: &str) -> Result<bool, BackendError> {
        (**self).judge_link(a, b)
    }
    fn judge_yes_no(&self, q: &str, m: &str) -> Result<bool, BackendError> {
        (**self).judge_yes_no(q, m)
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError>;

    /// Precomputed features when present, else the caption text.
    fn embed_item(&self, item: &ModalityItem) -> Result<EmbeddingVector, BackendError> {
        match &item.features {
            Some(f) => Ok(f.clone()),
            None => self.embed_text(&item.caption),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(&'static str, Option<f64>);

    impl AgentBackend for Fixed {
        fn complete(&self, _: &CompletionRequest) -> Result<Completion, BackendError> {
            Ok(Completion { text: self.0.into(), token_probability: self.1 })
        }
        fn reports_token_probability(&self) -> bool {
            self.1.is_some()
        }
    }

    fn profiles() -> Vec<SpeakerProfile> {
        vec![
            SpeakerProfile::new("A", "Alex", "friend"),
            SpeakerProfile::new("B", "Jamie", "friend"),
            SpeakerProfile::new("C", "Taylor", "coworker"),
        ]
    }

    fn with_ctx<R>(f: impl FnOnce(&TurnContext<'_>) -> R) -> R {
        let people = profiles();
        let items = BTreeMap::new();
        let ctx = TurnContext {
            session_index: 0,
            turn_index: 0,
            speaker: &people[1],
            participants: &people,
            turns: &[],
            items: &items,
            incoming: None,
            pending_item: None,
            opening_memory: None,
            nonce: 0,
        };
        f(&ctx)
    }

    #[test]
    fn bid_uses_token_probability() {
        let bid = with_ctx(|c| Fixed("[YES]", Some(0.82)).decide_turn(c)).unwrap();
        assert_eq!(bid.probability(), Some(0.82));
    }

    #[test]
    fn bid_garbage_is_protocol_error() {
        let err = with_ctx(|c| Fixed("maybe", None).decide_turn(c)).unwrap_err();
        assert_eq!(err.code(), "BACKEND_PROTOCOL");
    }

    #[test]
    fn retrieval_token() {
        assert_eq!(with_ctx(|c| Fixed("[NO_RET]", None).decide_retrieval(c)).unwrap(), RetrievalDecision::NoRet);
    }

    #[test]
    fn modality_without_pending_item_is_false() {
        assert!(!with_ctx(|c| Fixed("garbage", None).decide_modality(c)).unwrap());
    }

    #[test]
    fn judges() {
        assert!(Fixed("[POSITIVE]", None).judge_link("a", "b").unwrap());
        assert!(!Fixed("No.", None).judge_yes_no("q", "m").unwrap());
    }

    #[test]
    fn turn_bid_invariant() {
        assert!(TurnBid::yes(1.2).is_none());
        assert!(TurnBid::yes(f64::NAN).is_none());
        assert_eq!(TurnBid::no().probability(), None);
        assert_eq!(serde_json::to_string(&TurnBid::no()).unwrap(), r#"{"wants_turn":false}"#);
    }
}
