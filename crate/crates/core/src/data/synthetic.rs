//! Desk-scale corpora in the dataset format.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::TextPair;

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn pick<'a, R: Rng + ?Sized>(pool: &'a [String], rng: &mut R) -> &'a str {
    pool.choose(rng).expect("non-empty pool")
}

/// Random pairs over 40 words: 3–5 input words, and an output of two
/// sentences of 2–4 words each closed by `.` or `!`. The vocabulary stays
/// under 64 entries.
pub fn memorization_corpus<R: Rng + ?Sized>(n_pairs: usize, rng: &mut R) -> Vec<TextPair> {
    let pool = words("w", 40);
    (0..n_pairs)
        .map(|_| {
            let input_len = rng.random_range(3..=5);
            let input: Vec<&str> = (0..input_len).map(|_| pick(&pool, rng)).collect();
            let mut output = Vec::new();
            for _ in 0..2 {
                let len = rng.random_range(2..=4);
                output.extend((0..len).map(|_| pick(&pool, rng)));
                output.push(if rng.random_bool(0.5) { "." } else { "!" });
            }
            TextPair {
                input: input.join(" "),
                output: output.join(" "),
            }
        })
        .collect()
}

/// Number of distinct key tokens in [`echo_key_corpus`].
pub const ECHO_KEYS: usize = 8;

/// Inputs are a key token `kN` followed by three filler words; the output's
/// first sentence carries the same key between two common words, and a
/// second sentence of common words follows.
pub fn echo_key_corpus<R: Rng + ?Sized>(n_pairs: usize, rng: &mut R) -> Vec<TextPair> {
    let keys = words("k", ECHO_KEYS);
    let fillers = words("f", 12);
    let common = words("c", 10);
    (0..n_pairs)
        .map(|_| {
            let key = pick(&keys, rng);
            let input = [
                key,
                pick(&fillers, rng),
                pick(&fillers, rng),
                pick(&fillers, rng),
            ];
            let output = [
                pick(&common, rng),
                key,
                pick(&common, rng),
                ".",
                pick(&common, rng),
                pick(&common, rng),
                pick(&common, rng),
                ".",
            ];
            TextPair {
                input: input.join(" "),
                output: output.join(" "),
            }
        })
        .collect()
}

/// The key token of an echo-key input (its first word).
pub fn echo_key_of(input: &str) -> Option<&str> {
    input.split_whitespace().next()
}
