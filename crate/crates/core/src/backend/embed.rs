use super::{BackendError, Embedder};
use crate::model::EmbeddingVector;
use crate::rng::fnv1a64;

pub const DEFAULT_DIM: usize = 256;

/// Hashed bag-of-words embedding: lowercase, split on non-alphanumerics,
/// FNV-1a bucket per token, counts, L2 normalisation. No tokens gives the zero
/// vector.
pub fn det_embed_text(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim > 0, "embedding dim must be positive");
    let mut counts = vec![0u64; dim];
    let lower = text.to_lowercase();
    for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        counts[(fnv1a64(token.as_bytes()) % dim as u64) as usize] += 1;
    }
    let norm = counts.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        return EmbeddingVector::zeros(dim);
    }
    EmbeddingVector::new(counts.into_iter().map(|c| c as f64 / norm).collect()).expect("finite, non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeterministicEmbedder {
    pub dim: usize,
}

impl DeterministicEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Default for DeterministicEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl Embedder for DeterministicEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        Ok(det_embed_text(text, self.dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModalityItem, ModalityKind};
    use crate::retrieval::cosine_similarity;

    #[test]
    fn empty_text_is_zero() {
        let v = det_embed_text("", 256);
        assert_eq!(v, EmbeddingVector::zeros(256));
        assert_eq!(det_embed_text(" ,;! ", 256), EmbeddingVector::zeros(256));
    }

    #[test]
    fn repetition_is_normalised_away() {
        assert_eq!(det_embed_text("hello hello", 256), det_embed_text("hello", 256));
        assert_eq!(det_embed_text("Hello, WORLD", 256), det_embed_text("hello world", 256));
    }

    #[test]
    fn distinct_buckets_are_orthogonal() {
        let (a, b) = ("wind", "hat");
        assert_ne!(fnv1a64(a.as_bytes()) % 256, fnv1a64(b.as_bytes()) % 256);
        let score = cosine_similarity(&det_embed_text(a, 256), &det_embed_text(b, 256)).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn unit_norm() {
        let v = det_embed_text("the wind might blow your hat away", 64);
        let n: f64 = v.values().iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn item_features_take_precedence() {
        let e = DeterministicEmbedder::new(3);
        let mut item = ModalityItem::new("i", ModalityKind::Audio, "wind blowing");
        assert_eq!(e.embed_item(&item).unwrap(), det_embed_text("wind blowing", 3));
        item.features = Some(EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap());
        assert_eq!(e.embed_item(&item).unwrap().values(), &[1.0, 0.0, 0.0]);
    }
}
