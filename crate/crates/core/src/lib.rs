//! Engine for multimodal, multi-session, multi-party conversations.
//!
//! The crate is organised around a handful of layers:
//!
//! - [`model`]: episodes, sessions, turns, speakers and modality items, plus
//!   structural validation.
//! - [`memory`]: the per-owner multimodal memory graph and the summary wire
//!   format (`<sep>`-delimited, `(about X)`-attributed fragments).
//! - [`retrieval`]: cosine scoring, top-1 selection with linked expansion and
//!   full rankings for evaluation.
//! - [`backend`]: the contracts through which agents generate, judge and embed,
//!   with a deterministic scripted implementation and a remote HTTP adapter.
//! - [`orchestrator`]: turn arbitration, modality scheduling, retrieval-token
//!   handling, and end-of-session summarisation and linking.
//! - [`pipeline`]: desk-scale dataset construction (clustering, scenarios,
//!   generation, tagging, filtering).
//! - [`eval`]: Recall@K, MRR and next-speaker accuracy.

pub mod backend;
pub mod eval;
pub mod memory;
pub mod model;
pub mod orchestrator;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod rng;

pub use backend::{
    AgentBackend, BackendError, DeterministicEmbedder, Embedder, RetrievalDecision, TurnBid,
};
pub use memory::{About, MemoryDraft, MemoryGraph, MemoryKind, MemoryUnit};
pub use model::{
    EmbeddingVector, Episode, ItemId, MemoryId, ModalityItem, ModalityKind, Session, SpeakerId,
    SpeakerProfile, TimeInterval, Turn,
};
pub use retrieval::{ContextEncoding, RetrievalResult};
