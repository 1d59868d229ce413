use std::collections::HashMap;

use crate::error::{ensure, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const MASK: &str = "<mask>";
pub const UNK: &str = "<unk>";

/// Special tokens, in id order.
pub const SPECIALS: [&str; 5] = [PAD, BOS, EOS, MASK, UNK];

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const MASK_ID: usize = 3;
pub const UNK_ID: usize = 4;

/// Tokens that close a sentence.
pub const SENTENCE_DELIMITERS: [&str; 3] = [".", "!", "?"];

/// Splits on whitespace, then separates every ASCII punctuation character
/// into its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_ascii_punctuation() {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(ch.to_string());
            } else {
                word.push(ch);
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

/// Word-level vocabulary with the special ids at 0..5.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    delimiters: Vec<usize>,
}

impl Vocab {
    /// Specials first, then corpus tokens by descending frequency with ties
    /// broken alphabetically, truncated to `max_size` entries in total.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        ensure!(
            max_size >= SPECIALS.len(),
            "max vocabulary size {max_size} cannot hold the {} special tokens",
            SPECIALS.len()
        );
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            for tok in tokenize(text) {
                any = true;
                *counts.entry(tok).or_default() += 1;
            }
        }
        ensure!(any, "cannot build a vocabulary from an empty corpus");
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIALS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .take(max_size)
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        ensure!(
            tokens.len() >= SPECIALS.len() && tokens.iter().zip(SPECIALS).all(|(t, s)| t == s),
            "vocabulary must start with the special tokens {SPECIALS:?}"
        );
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            ensure!(
                index.insert(t.clone(), i).is_none(),
                "duplicate token {t:?}"
            );
        }
        let delimiters = SENTENCE_DELIMITERS
            .iter()
            .filter_map(|d| index.get(*d).copied())
            .collect();
        Ok(Self {
            tokens,
            index,
            delimiters,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad(&self) -> usize {
        PAD_ID
    }
    pub fn bos(&self) -> usize {
        BOS_ID
    }
    pub fn eos(&self) -> usize {
        EOS_ID
    }
    pub fn mask(&self) -> usize {
        MASK_ID
    }
    pub fn unk(&self) -> usize {
        UNK_ID
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Ids of the sentence delimiters present in this vocabulary.
    pub fn delimiters(&self) -> &[usize] {
        &self.delimiters
    }

    pub fn is_delimiter(&self, id: usize) -> bool {
        self.delimiters.contains(&id)
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined tokens; PAD, BOS and EOS are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id != self.pad() && id != self.bos() && id != self.eos())
            .map(|&id| self.tokens[id].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}
