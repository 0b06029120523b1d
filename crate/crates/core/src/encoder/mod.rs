//! Siamese document encoders and the narrative (cosine) score.
//!
//! Two providers sit behind [`EmbeddingProvider`]: a [`PrecomputedStore`]
//! holding vectors exported from an external sentence encoder, and the
//! trainable [`HashedEncoder`], which mean-pools hashed word and character
//! n-gram rows and is trained with the same regression objective a
//! Transformer bi-encoder would be: MSE between the pair label and the cosine
//! of the two document embeddings, one parameter set shared by both sides.

mod hashed;
mod store;
mod train;

pub use hashed::{DocFeatures, FeatureConfig, HashedEncoder};
pub use store::PrecomputedStore;
pub use train::{
    gradient_check, gradient_check_against, loss_and_gradient, train_siamese, SiameseExample, SiameseTrainConfig,
    SparseGradient, TrainReport,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::text;

pub const DEFAULT_MAX_SEQ_LEN: usize = 512;

/// Title tokens followed by body tokens, truncated to `max_seq_len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedDocument {
    pub tokens: Vec<String>,
}

pub fn prepare_document(doc: &Document, max_seq_len: usize) -> PreparedDocument {
    let mut tokens = text::tokenize(&doc.title);
    if tokens.len() < max_seq_len {
        tokens.extend(text::tokenize(&doc.body).into_iter().take(max_seq_len - tokens.len()));
    }
    tokens.truncate(max_seq_len);
    PreparedDocument { tokens }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentEmbedding(pub Vec<f64>);

impl DocumentEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Cosine of two embeddings; 0 when either is the zero vector.
pub fn narrative_similarity(a: &DocumentEmbedding, b: &DocumentEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(cosine(&a.0, &b.0))
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Precomputed(PrecomputedStore),
    Hashed(HashedEncoder),
}

impl EmbeddingProvider {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Precomputed(s) => s.dim(),
            EmbeddingProvider::Hashed(h) => h.dim(),
        }
    }

    /// Looks the document up by id (precomputed) or encodes its prepared
    /// token sequence (hashed).
    pub fn embed(&self, doc: &Document) -> Result<DocumentEmbedding> {
        match self {
            EmbeddingProvider::Precomputed(s) => s.get(&doc.id).cloned(),
            EmbeddingProvider::Hashed(h) => Ok(h.encode(&prepare_document(doc, h.config().max_seq_len))),
        }
    }

    /// Embeds every document once into a precomputed store so later lookups
    /// skip re-encoding. A precomputed provider is returned unchanged.
    pub fn cached<'a>(self, docs: impl IntoIterator<Item = &'a Document>) -> Result<EmbeddingProvider> {
        let EmbeddingProvider::Hashed(h) = self else {
            return Ok(self);
        };
        let docs: Vec<&Document> = docs.into_iter().collect();
        let embedded: Vec<DocumentEmbedding> = docs
            .par_iter()
            .map(|d| h.encode(&prepare_document(d, h.config().max_seq_len)))
            .collect();
        let mut store = PrecomputedStore::new(h.dim());
        for (d, e) in docs.into_iter().zip(embedded) {
            store.insert(d.id.clone(), e)?;
        }
        Ok(EmbeddingProvider::Precomputed(store))
    }
}
