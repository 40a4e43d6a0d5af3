use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::lexical::terms;
use crate::model::{CLS_ID, UNK_ID};

const RESERVED: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

/// Word-level vocabulary with the four reserved ids in front.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Vocabulary::from_tokens(f.tokens.into_iter().skip(RESERVED.len()))
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile { tokens: v.tokens }
    }
}

impl Vocabulary {
    /// Reserved entries followed by `words` in order; repeats are skipped.
    pub fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for w in words {
            if !index.contains_key(&w) {
                index.insert(w.clone(), tokens.len() as u32);
                tokens.push(w);
            }
        }
        Vocabulary { tokens, index }
    }

    /// Keeps the most frequent words of `texts`, ties broken
    /// lexicographically, so that the total size is at most `max_size`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for t in terms(text) {
                *freq.entry(t).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = freq.into_iter().filter(|(w, _)| !RESERVED.contains(&w.as_str())).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        words.truncate(max_size.saturating_sub(RESERVED.len()));
        Self::from_tokens(words.into_iter().map(|(w, _)| w))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: the reserved entries are present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// `[CLS]` followed by the ids of `text`'s words, cut to `max_len`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Vec<u32> {
        let mut ids = Vec::with_capacity(max_len.min(64));
        ids.push(CLS_ID);
        ids.extend(terms(text).iter().map(|w| self.id(w)));
        ids.truncate(max_len.max(1));
        ids
    }
}
