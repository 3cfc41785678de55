use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{hex_digest, CorpusError, Result};

pub const HASH_BUCKETS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub vector: Vec<f32>,
    pub source_hash: String,
}

/// Frozen text encoder producing unit-norm vectors. A pretrained encoder can
/// be slotted in; checkpoints record `id()` and refuse mismatched encoders.
pub trait TextEncoder: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<TextEmbedding>;
}

/// Character-trigram counts hashed into 4096 buckets, then a seeded random
/// sign projection to `d_text` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrigramHashEncoder {
    pub d_text: usize,
    pub seed: u64,
}

impl TrigramHashEncoder {
    pub fn new(d_text: usize, seed: u64) -> Self {
        Self { d_text, seed }
    }
}

impl TrigramHashEncoder {
    /// Inverse of [`TextEncoder::id`], for rebuilding the encoder a checkpoint names.
    pub fn from_id(id: &str) -> Option<Self> {
        let rest = id.strip_prefix("trigram-hash-v1/d")?;
        let (d, seed) = rest.split_once("/s")?;
        Some(Self::new(d.parse().ok()?, seed.parse().ok()?))
    }
}

impl Default for TrigramHashEncoder {
    fn default() -> Self {
        Self::new(512, 0)
    }
}

impl TextEncoder for TrigramHashEncoder {
    fn id(&self) -> String {
        format!("trigram-hash-v1/d{}/s{}", self.d_text, self.seed)
    }

    fn dim(&self) -> usize {
        self.d_text
    }

    fn encode(&self, text: &str) -> Result<TextEmbedding> {
        fallback_text_encode(text, self.d_text, self.seed)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Entry `(bucket, column)` of the `4096 x d_text` sign matrix for `seed`.
#[inline]
fn projection_sign(seed: u64, bucket: usize, column: usize) -> f64 {
    let h = splitmix64(splitmix64(seed ^ ((bucket as u64) << 32)) ^ column as u64);
    if h >> 63 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub(crate) fn trigram_buckets(text: &str) -> BTreeMap<usize, u32> {
    let lower: Vec<char> = text.to_lowercase().chars().collect();
    let mut counts = BTreeMap::new();
    let grams: Vec<String> = if lower.len() < 3 {
        vec![lower.iter().collect()]
    } else {
        lower.windows(3).map(|w| w.iter().collect()).collect()
    };
    for g in grams {
        *counts.entry((fnv1a(g.as_bytes()) % HASH_BUCKETS as u64) as usize).or_insert(0) += 1;
    }
    counts
}

/// Deterministic built-in text embedding: a pure function of `(text, d_text, seed)`.
pub fn fallback_text_encode(text: &str, d_text: usize, seed: u64) -> Result<TextEmbedding> {
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyText);
    }
    let counts = trigram_buckets(text);
    let mut v = vec![0f64; d_text];
    for (&bucket, &n) in &counts {
        for (j, x) in v.iter_mut().enumerate() {
            *x += n as f64 * projection_sign(seed, bucket, j);
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(CorpusError::DegenerateText(text.to_string()));
    }
    Ok(TextEmbedding {
        vector: v.iter().map(|x| (x / norm) as f32).collect(),
        source_hash: hex_digest(text.as_bytes()),
    })
}
