//! Cosine scoring of stored memories against the live session context.
//!
//! Retrieval picks exactly one memory: the top-1 by cosine similarity within
//! one (owner, kind) store, ties going to the smaller id, and brings along the
//! memories linked to it.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Embedder};
use crate::memory::{MemoryGraph, MemoryKind, MemoryUnit};
use crate::model::{EmbeddingVector, MemoryId, ModalityItem, SpeakerId, Turn};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrievalError {
    #[error("DIM_MISMATCH: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
}

/// Embedded session context.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoding {
    pub vector: EmbeddingVector,
    pub source_turn_count: usize,
}

impl ContextEncoding {
    pub fn new(vector: EmbeddingVector, source_turn_count: usize) -> Self {
        Self { vector, source_turn_count }
    }

    /// Embeds the whole session so far: every utterance plus the captions of
    /// the modality items the speakers have perceived. No truncation is applied.
    pub fn encode(
        embedder: &dyn Embedder,
        turns: &[Turn],
        perceived: &[&ModalityItem],
    ) -> Result<Self, BackendError> {
        let mut text = String::new();
        for t in turns {
            text.push_str(&t.text);
            text.push('\n');
        }
        for item in perceived {
            text.push_str(&item.caption);
            text.push('\n');
        }
        Ok(Self::new(embedder.embed_text(&text)?, turns.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub unit: MemoryUnit,
    pub score: f64,
    /// Linked closure of `unit`, ascending by id, never containing `unit`.
    pub expansion: Vec<MemoryUnit>,
}

impl RetrievalResult {
    /// `unit` first, then the expansion.
    pub fn memory_ids(&self) -> Vec<MemoryId> {
        std::iter::once(self.unit.id)
            .chain(self.expansion.iter().map(|u| u.id))
            .collect()
    }
}

/// `dot(a,b) / (|a| |b|)`, accumulated in index order in f64. A zero-norm
/// vector scores 0 against everything.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimMismatch { left: a.dim(), right: b.dim() });
    }
    let (mut dot, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Descending score, then ascending id.
fn rank_order(a: &(MemoryId, f64), b: &(MemoryId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// Argmax over scored candidates with the smallest-id tie-break. Candidates may
/// arrive in any order.
pub fn top1<'a, I>(context: &ContextEncoding, candidates: I) -> Result<Option<(MemoryId, f64)>, RetrievalError>
where
    I: IntoIterator<Item = (MemoryId, &'a EmbeddingVector)>,
{
    let mut best: Option<(MemoryId, f64)> = None;
    for (id, v) in candidates {
        let score = cosine_similarity(&context.vector, v)?;
        let better = match best {
            None => true,
            Some((bid, bs)) => score > bs || (score == bs && id < bid),
        };
        if better {
            best = Some((id, score));
        }
    }
    Ok(best)
}

/// Every candidate with its score, sorted descending with the id tie-break.
pub fn rank<'a, I>(context: &ContextEncoding, candidates: I) -> Result<Vec<(MemoryId, f64)>, RetrievalError>
where
    I: IntoIterator<Item = (MemoryId, &'a EmbeddingVector)>,
{
    let mut scored = candidates
        .into_iter()
        .map(|(id, v)| cosine_similarity(&context.vector, v).map(|s| (id, s)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(rank_order);
    Ok(scored)
}

fn store_vectors<'a>(
    graph: &'a MemoryGraph,
    owner: &'a SpeakerId,
    kind: MemoryKind,
) -> impl Iterator<Item = (MemoryId, &'a EmbeddingVector)> + 'a {
    graph
        .store(owner, kind)
        .map(move |u| (u.id, graph.embedding(u.id).expect("every unit has an embedding")))
}

/// Top-1 memory of `kind` in `owner`'s store plus its one-hop linked closure.
pub fn retrieve_top1(
    context: &ContextEncoding,
    graph: &MemoryGraph,
    owner: &SpeakerId,
    kind: MemoryKind,
) -> Result<Option<RetrievalResult>, RetrievalError> {
    retrieve_top1_with_depth(context, graph, owner, kind, 1)
}

pub fn retrieve_top1_with_depth(
    context: &ContextEncoding,
    graph: &MemoryGraph,
    owner: &SpeakerId,
    kind: MemoryKind,
    depth: usize,
) -> Result<Option<RetrievalResult>, RetrievalError> {
    let Some((id, score)) = top1(context, store_vectors(graph, owner, kind))? else {
        return Ok(None);
    };
    let expansion = graph
        .linked_closure(id, depth)
        .expect("top-1 id comes from the graph")
        .into_iter()
        .map(|m| graph.get(m).expect("closure ids exist").clone())
        .collect();
    Ok(Some(RetrievalResult {
        unit: graph.get(id).expect("exists").clone(),
        score,
        expansion,
    }))
}

/// Full ranking of `owner`'s `kind` store.
pub fn rank_memories(
    context: &ContextEncoding,
    graph: &MemoryGraph,
    owner: &SpeakerId,
    kind: MemoryKind,
) -> Result<Vec<(MemoryId, f64)>, RetrievalError> {
    rank(context, store_vectors(graph, owner, kind))
}
