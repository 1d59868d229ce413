//! Corpus ingestion, vocabulary, tokenization and sentence segmentation.

mod corpus;
pub mod synthetic;
mod vocab;

pub use corpus::{
    encode_pairs, load_jsonl, split_sentences, write_jsonl, Example, LengthLimits, LoadedCorpus,
    TextPair,
};
pub use vocab::{
    tokenize, Vocab, BOS, BOS_ID, EOS, EOS_ID, MASK, MASK_ID, PAD, PAD_ID, SENTENCE_DELIMITERS,
    SPECIALS, UNK, UNK_ID,
};

#[cfg(test)]
mod tests;
