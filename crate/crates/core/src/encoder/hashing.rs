//! Signed feature hashing of word uni- and bigrams.
//!
//! Hash values come from 64-bit FNV-1a so vectors are identical across
//! processes, platforms and toolchain versions.

use serde::{Deserialize, Serialize};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const NGRAM_JOINER: &str = "\u{1f}";

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric runs; whitespace and punctuation separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingConfig {
    pub dimension: usize,
    pub max_ngram: usize,
}

impl Default for HashingConfig {
    fn default() -> Self {
        HashingConfig {
            dimension: 256,
            max_ngram: 2,
        }
    }
}

impl HashingConfig {
    pub fn identifier(&self) -> String {
        format!("hashing-v1-m{}-n{}", self.dimension, self.max_ngram)
    }

    /// Sparse signed counts as sorted `(bucket, weight)` entries.
    pub fn sparse_features(&self, text: &str) -> Vec<(usize, f64)> {
        let tokens = tokenize(text);
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for n in 1..=self.max_ngram.max(1) {
            for gram in tokens.windows(n) {
                let key = gram.join(NGRAM_JOINER);
                let h = fnv1a(key.as_bytes());
                let bucket = (h % self.dimension as u64) as usize;
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                entries.push((bucket, sign));
            }
        }
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (b, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == b => last.1 += w,
                _ => merged.push((b, w)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        merged
    }

    pub fn dense_features(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for (b, w) in self.sparse_features(text) {
            v[b] = w;
        }
        v
    }
}
