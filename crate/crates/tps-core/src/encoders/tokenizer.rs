//! Word-level tokenizer shared with the phrase parser.
//!
//! Sequences are `[SOT] words [EOT] PAD...`, always padded to the fixed
//! max length; words beyond `max_len - 2` are truncated. Unknown words map
//! to UNK so token positions stay aligned with parser spans.

use std::collections::HashMap;

use crate::error::{CoreError, Result};
use crate::textparse;

pub const PAD: usize = 0;
pub const SOT: usize = 1;
pub const EOT: usize = 2;
pub const UNK: usize = 3;
const N_SPECIALS: usize = 4;

/// A tokenized text: fixed-length id sequence plus the actual word count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub ids: Vec<usize>,
    /// Number of real word tokens (positions `1..=n_words`).
    pub n_words: usize,
}

impl TokenizedText {
    pub fn eot_pos(&self) -> usize {
        1 + self.n_words
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    words: Vec<String>,
    ids: HashMap<String, usize>,
    max_len: usize,
}

impl Tokenizer {
    pub fn new(words: Vec<String>, max_len: usize) -> Result<Self> {
        if max_len < 3 {
            return Err(CoreError::Config(format!(
                "max_len must be >= 3 (SOT + word + EOT), got {max_len}"
            )));
        }
        let mut ids = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), N_SPECIALS + i).is_some() {
                return Err(CoreError::Config(format!("duplicate vocab word {w:?}")));
            }
        }
        Ok(Tokenizer {
            words,
            ids,
            max_len,
        })
    }

    /// One word per line.
    pub fn from_vocab_file(path: &std::path::Path, max_len: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let words: Vec<String> = text
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        Tokenizer::new(words, max_len)
    }

    pub fn save_vocab(&self, path: &std::path::Path) -> Result<()> {
        let mut out = self.words.join("\n");
        out.push('\n');
        std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
    }

    pub fn vocab_size(&self) -> usize {
        N_SPECIALS + self.words.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, text: &str) -> Result<TokenizedText> {
        let words = textparse::tokenize(text);
        if words.is_empty() {
            return Err(CoreError::Argument(format!(
                "text tokenizes to no words: {text:?}"
            )));
        }
        let keep = words.len().min(self.max_len - 2);
        let mut ids = Vec::with_capacity(self.max_len);
        ids.push(SOT);
        for w in &words[..keep] {
            ids.push(self.ids.get(w).copied().unwrap_or(UNK));
        }
        ids.push(EOT);
        ids.resize(self.max_len, PAD);
        Ok(TokenizedText { ids, n_words: keep })
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter_map(|&id| {
                if id >= N_SPECIALS {
                    self.words.get(id - N_SPECIALS).cloned()
                } else {
                    None
                }
            })
            .collect()
    }
}
