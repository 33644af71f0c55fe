use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const RESERVED: usize = 3;

/// Word-level tokenizer with a fixed vocabulary and hashed buckets for
/// out-of-vocabulary words.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    words: Vec<String>,
    oov_buckets: usize,
}

impl Tokenizer {
    pub fn new<I, S>(words: I, oov_buckets: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut list: Vec<String> = Vec::new();
        for w in words {
            let w = w.as_ref().to_lowercase();
            if !w.is_empty() && !list.contains(&w) {
                list.push(w);
            }
        }
        Self {
            words: list,
            oov_buckets: oov_buckets.max(1),
        }
    }

    pub fn vocab_size(&self) -> usize {
        RESERVED + self.words.len() + self.oov_buckets
    }

    fn word_id(&self, word: &str) -> usize {
        match self.words.iter().position(|w| w == word) {
            Some(i) => RESERVED + i,
            None => {
                RESERVED + self.words.len() + (fnv1a(word.as_bytes()) as usize % self.oov_buckets)
            }
        }
    }

    /// Word ids of `text`, lowercased and split on whitespace, no sentinels.
    pub fn words(&self, text: &str) -> Result<Vec<usize>> {
        let ids: Vec<usize> = text
            .to_lowercase()
            .split_whitespace()
            .map(|w| self.word_id(w))
            .collect();
        if ids.is_empty() {
            return Err(Error::data("empty text cannot be tokenized"));
        }
        Ok(ids)
    }

    /// `[BOS, w_1..w_m, EOS]`.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(8);
        ids.push(BOS);
        ids.extend(self.words(text)?);
        ids.push(EOS);
        Ok(ids)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
