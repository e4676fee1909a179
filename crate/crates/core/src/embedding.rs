//! Text embeddings and cosine similarity.
//!
//! The built-in [`HashEmbedder`] is a signed feature-hashing bag-of-words model:
//! tokens are lowercased alphanumeric runs, each token lands in one of `D`
//! buckets (seeded FNV-1a, finalized with splitmix64) with a sign taken from a
//! second seeded hash, and the accumulated vector is L2-normalized. It needs no model
//! files and gives identical vectors on every platform.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default embedding dimension.
pub const DEFAULT_DIMENSION: usize = 256;

/// Norm tolerance for vectors that claim to be unit length.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const BUCKET_SEED: u64 = 0x5851_f42d_4c95_7f2d;
const SIGN_SEED: u64 = 0x1405_7b7e_f767_814f;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("text contains no tokens")]
    NoTokens,
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector is not unit norm (norm = {norm})")]
    NotUnitNorm { norm: f64 },
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("embedding backend failed: {0}")]
    Backend(String),
}

/// A unit-norm real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Scales `values` to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDimension);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self(values))
    }

    /// Accepts `values` only if they already have unit norm.
    pub fn from_unit(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDimension);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(EmbeddingError::NotUnitNorm { norm });
        }
        Ok(Self(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::from_unit(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_sim(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Anything that maps text to a fixed-dimension unit vector, deterministically.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError>;
    fn dimension(&self) -> usize;
}

/// Lowercased alphanumeric tokens of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// FNV-1a over the seed bytes then the token. The low bits of raw FNV-1a only
/// depend on the low bits of the input, so the result goes through a finalizer
/// before it is reduced to a bucket or a sign.
fn fnv1a_seeded(seed: u64, bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    crate::rng::splitmix64(hash)
}

/// Signed feature-hashing embedding of `text` into `dimension` buckets.
pub fn hash_embed(text: &str, dimension: usize) -> Result<Embedding, EmbeddingError> {
    if dimension == 0 {
        return Err(EmbeddingError::ZeroDimension);
    }
    let mut acc = vec![0.0f64; dimension];
    let mut tokens = 0usize;
    for token in tokenize(text) {
        tokens += 1;
        let bytes = token.as_bytes();
        let bucket = (fnv1a_seeded(BUCKET_SEED, bytes) % dimension as u64) as usize;
        let sign = if fnv1a_seeded(SIGN_SEED, bytes) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        acc[bucket] += sign;
    }
    if tokens == 0 {
        return Err(EmbeddingError::NoTokens);
    }
    Embedding::normalized(acc)
}

/// [`hash_embed`] behind the [`Embedder`] trait.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self { dimension }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        hash_embed(text, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
