//! Tweet cleaning, vocabulary construction and fixed-length encoding.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
pub const DEFAULT_VOCAB_CAP: usize = 250_000;
pub const DEFAULT_MAX_LEN: usize = 30;

/// Lowercases, replaces URLs and @mentions with sentinels, drops `#` and all
/// other punctuation except `?` and `!`, which become tokens of their own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        if lower.starts_with('@') && lower.len() > 1 {
            out.push(USER_TOKEN.to_string());
            continue;
        }
        let mut word = String::new();
        for ch in lower.chars() {
            if ch.is_alphanumeric() || ch == '_' {
                word.push(ch);
            } else if ch == '?' || ch == '!' {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuilds the lookup table after deserialisation.
    pub fn reindex(&mut self) {
        *self = Vocabulary::from_tokens(std::mem::take(&mut self.tokens));
    }
}

/// Frequency-ranked vocabulary (ties broken lexicographically) with
/// `<pad>` = 0 and `<unk>` = 1 reserved; at most `cap` entries in total.
pub fn build_vocab<'a, I>(corpus: I, cap: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [String]>,
{
    assert!(cap >= 2, "vocabulary cap must leave room for the reserved tokens");
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for tok in doc {
            if tok != PAD_TOKEN && tok != UNK_TOKEN {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(ranked.into_iter().take(cap - 2).map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens)
}

/// Maps tokens to indices, truncating from the tail or padding with
/// [`PAD_INDEX`] to exactly `max_len` entries. Returns the indices and the
/// number of real tokens.
pub fn encode_tweet(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> (Vec<usize>, usize) {
    assert!(max_len >= 1, "max_len must be positive");
    let length = tokens.len().min(max_len);
    let mut ids: Vec<usize> = tokens[..length]
        .iter()
        .map(|t| vocab.index_of(t).unwrap_or(UNK_INDEX))
        .collect();
    ids.resize(max_len, PAD_INDEX);
    (ids, length)
}
