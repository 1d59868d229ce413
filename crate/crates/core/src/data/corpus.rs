use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{tokenize, Vocab};
use crate::error::{ensure, Error, Result};

/// One dataset record: `{"input": ..., "output": ...}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub input: String,
    pub output: String,
}

/// Token caps applied when loading; longer pairs are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthLimits {
    pub max_input_tokens: usize,
    pub max_output_tokens: usize,
}

impl LengthLimits {
    /// Caps that keep every encoder and decoder sequence within
    /// `max_positions` once 2k prompt vectors are attached.
    pub fn for_model(max_positions: usize, k: usize) -> Result<Self> {
        ensure!(
            2 * k < max_positions,
            "2k = {} prompt vectors leave no room within max_positions {max_positions}",
            2 * k
        );
        let cap = max_positions - 2 * k;
        Ok(Self {
            max_input_tokens: cap,
            max_output_tokens: cap,
        })
    }

    pub fn unlimited() -> Self {
        Self {
            max_input_tokens: usize::MAX,
            max_output_tokens: usize::MAX,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadedCorpus {
    pub pairs: Vec<TextPair>,
    /// Pairs dropped for exceeding the length limits.
    pub discarded: usize,
}

/// Reads a line-delimited JSON dataset, preserving order. Blank lines are
/// skipped.
pub fn load_jsonl(path: impl AsRef<Path>, limits: LengthLimits) -> Result<LoadedCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = LoadedCorpus::default();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: TextPair = serde_json::from_str(&line).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        if tokenize(&pair.input).len() > limits.max_input_tokens
            || tokenize(&pair.output).len() > limits.max_output_tokens
        {
            corpus.discarded += 1;
            continue;
        }
        corpus.pairs.push(pair);
    }
    Ok(corpus)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Splits after every sentence delimiter. Delimiters stay with their sentence
/// and a trailing fragment forms a final sentence.
pub fn split_sentences(output_ids: &[usize], vocab: &Vocab) -> Vec<Vec<usize>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for &id in output_ids {
        current.push(id);
        if vocab.is_delimiter(id) {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

/// An encoded (input, output) pair with the output segmented into sentences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub input_ids: Vec<usize>,
    pub output_sentences: Vec<Vec<usize>>,
}

impl Example {
    pub fn new(input_ids: Vec<usize>, output_ids: &[usize], vocab: &Vocab) -> Result<Self> {
        ensure!(!input_ids.is_empty(), "example input is empty");
        ensure!(!output_ids.is_empty(), "example output is empty");
        Ok(Self {
            input_ids,
            output_sentences: split_sentences(output_ids, vocab),
        })
    }

    pub fn from_pair(pair: &TextPair, vocab: &Vocab) -> Result<Self> {
        Self::new(
            vocab.encode(&pair.input),
            &vocab.encode(&pair.output),
            vocab,
        )
    }

    pub fn output_ids(&self) -> Vec<usize> {
        self.output_sentences.concat()
    }

    /// BOS, the output tokens, EOS.
    pub fn target_ids(&self, vocab: &Vocab) -> Vec<usize> {
        bracket(&self.output_ids(), vocab)
    }

    /// BOS, the input tokens, EOS.
    pub fn input_target_ids(&self, vocab: &Vocab) -> Vec<usize> {
        bracket(&self.input_ids, vocab)
    }
}

fn bracket(ids: &[usize], vocab: &Vocab) -> Vec<usize> {
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.push(vocab.bos());
    out.extend_from_slice(ids);
    out.push(vocab.eos());
    out
}

pub fn encode_pairs(pairs: &[TextPair], vocab: &Vocab) -> Result<Vec<Example>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Example::from_pair(p, vocab).map_err(|e| Error::Usage(format!("pair {}: {e}", i + 1)))
        })
        .collect()
}
