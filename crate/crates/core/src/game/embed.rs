use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EMBEDDING_DIM: usize = 512;

/// Sentence representation of a caption.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionEmbedding {
    pub vector: Vec<f64>,
    /// Zero vector (e.g. from empty text); similarity against it is 0.
    pub degenerate: bool,
}

impl CaptionEmbedding {
    pub fn from_vector(vector: Vec<f64>) -> Self {
        let degenerate = !vector.iter().any(|v| *v != 0.0);
        Self { vector, degenerate }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Maps caption text to an embedding. Must be deterministic.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<CaptionEmbedding>;
}

/// Bag of hashed word unigrams and bigrams, L2-normalised.
///
/// Text is lowercased and split on non-alphanumeric characters; each unigram
/// and each adjacent word pair is hashed (64-bit FNV-1a) into one of `dim`
/// count buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedNgramEmbedder {
    pub dim: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

impl HashedNgramEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self { dim })
    }

    pub fn embed_text(&self, text: &str) -> CaptionEmbedding {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let mut counts = vec![0.0; self.dim];
        for w in &words {
            counts[(fnv1a(&[b"1:", w.as_bytes()]) % self.dim as u64) as usize] += 1.0;
        }
        for pair in words.windows(2) {
            let key = fnv1a(&[b"2:", pair[0].as_bytes(), b" ", pair[1].as_bytes()]);
            counts[(key % self.dim as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.iter_mut().for_each(|v| *v /= norm);
        }
        CaptionEmbedding::from_vector(counts)
    }
}

impl Embedder for HashedNgramEmbedder {
    fn embed(&self, text: &str) -> Result<CaptionEmbedding> {
        Ok(self.embed_text(text))
    }
}

/// Default sentence embedding of a caption.
pub fn embed_caption(text: &str) -> CaptionEmbedding {
    HashedNgramEmbedder::default().embed_text(text)
}

/// Cosine similarity in `[-1, 1]`; 0 when either side is degenerate.
pub fn similarity(a: &CaptionEmbedding, b: &CaptionEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Input(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.degenerate || b.degenerate {
        return Ok(0.0);
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
