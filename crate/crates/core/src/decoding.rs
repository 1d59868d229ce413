//! Sentence-level decoding: each step proposes `beam_size` whole-sentence
//! candidates from the forward model, scores them with the inverse model, and
//! keeps the candidate with the best combined score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Vocab, BOS_ID, EOS_ID, MASK_ID, PAD_ID, UNK_ID};
use crate::error::{ensure, Result};
use crate::inverse::InverseModel;
use crate::numerics::{Float, Tensor};
use crate::prompt::ForwardModel;

/// How candidate sentences are proposed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    /// Temperature-scaled nucleus sampling.
    #[default]
    Nucleus,
    /// Argmax at every token; all candidates coincide.
    Greedy,
    /// Every sentence up to `max_sentence_tokens`; `beam_size` is ignored.
    Enumerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_sentences: usize,
    pub lambda: f64,
    pub nucleus_p: f64,
    pub temperature: f64,
    pub max_sentence_tokens: usize,
    pub seed: u64,
    /// Divide each log-probability by its token count before combining.
    pub normalize_scores: bool,
    pub source: CandidateSource,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            max_sentences: 4,
            lambda: 4.0,
            nucleus_p: 0.9,
            temperature: 0.7,
            max_sentence_tokens: 16,
            seed: 0,
            normalize_scores: false,
            source: CandidateSource::Nucleus,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.beam_size >= 1, "beam size must be at least 1");
        ensure!(self.max_sentences >= 1, "max_sentences must be at least 1");
        ensure!(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            "lambda must be non-negative"
        );
        ensure!(
            self.nucleus_p > 0.0 && self.nucleus_p <= 1.0,
            "nucleus_p must lie in (0, 1]"
        );
        ensure!(
            self.temperature > 0.0 && self.temperature.is_finite(),
            "temperature must be positive"
        );
        ensure!(
            self.max_sentence_tokens >= 1,
            "max_sentence_tokens must be at least 1"
        );
        Ok(())
    }
}

/// A proposed sentence and its scores.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamCandidate {
    /// Sampled tokens, including the closing delimiter or EOS if one was drawn.
    pub tokens: Vec<usize>,
    /// Σ log Pr(token) under the forward model.
    pub forward_logprob: Float,
    /// log Pr(X | sentence) under the inverse model; 0 when decoding without one.
    pub inverse_logprob: Float,
    pub combined: Float,
}

impl BeamCandidate {
    pub fn contains_eos(&self) -> bool {
        self.tokens.contains(&EOS_ID)
    }

    /// Tokens without EOS.
    pub fn content(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .copied()
            .filter(|&t| t != EOS_ID)
            .collect()
    }
}

/// `forward + λ·inverse`.
pub fn combined_score(forward_logprob: Float, inverse_logprob: Float, lambda: Float) -> Float {
    forward_logprob + lambda * inverse_logprob
}

/// Index of the highest combined score; the lowest index wins ties.
pub fn select_best(candidates: &[BeamCandidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        match best {
            Some(b) if candidates[b].combined >= c.combined => {}
            _ => best = Some(i),
        }
    }
    best
}

/// The smallest probability-sorted prefix whose mass reaches `p`,
/// renormalized. Ties in probability keep the lower id first.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push(i);
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    kept.into_iter().map(|i| (i, probs[i] / mass)).collect()
}

/// Tokens a sentence may contain: EOS and every non-special word.
fn allowed(id: usize) -> bool {
    !matches!(id, PAD_ID | BOS_ID | MASK_ID | UNK_ID)
}

fn is_terminal(id: usize, vocab: &Vocab) -> bool {
    id == EOS_ID || vocab.is_delimiter(id)
}

/// Independent stream per (seed, step, candidate).
fn candidate_rng(seed: u64, step: usize, candidate: usize) -> ChaCha8Rng {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let s = mix(seed ^ mix((step as u64) << 32 | candidate as u64));
    ChaCha8Rng::seed_from_u64(s)
}

fn sample_token(log_probs: &[Float], config: &DecodeConfig, rng: &mut ChaCha8Rng) -> usize {
    let t = config.temperature;
    let scaled: Vec<f64> = log_probs
        .iter()
        .enumerate()
        .map(|(i, &lp)| {
            if allowed(i) {
                lp as f64 / t
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scaled.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    let probs: Vec<f64> = exp.iter().map(|e| e / z).collect();
    let kept = nucleus_filter(&probs, config.nucleus_p);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(id, q) in &kept {
        acc += q;
        if u < acc {
            return id;
        }
    }
    kept.last().expect("at least one token kept").0
}

fn greedy_token(log_probs: &[Float]) -> usize {
    let mut best = None;
    for (i, &lp) in log_probs.iter().enumerate() {
        if !allowed(i) {
            continue;
        }
        match best {
            Some((_, b)) if b >= lp => {}
            _ => best = Some((i, lp)),
        }
    }
    best.expect("vocabulary has an allowed token").0
}

/// Every sentence of 1..=max_len allowed tokens in which only the final
/// token may be terminal.
pub fn enumerate_sentences(vocab: &Vocab, max_len: usize) -> Vec<Vec<usize>> {
    let ids: Vec<usize> = (0..vocab.len()).filter(|&i| allowed(i)).collect();
    let mut out = Vec::new();
    let mut open: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in &open {
            for &id in &ids {
                let mut s = prefix.clone();
                s.push(id);
                if !is_terminal(id, vocab) {
                    next.push(s.clone());
                }
                out.push(s);
            }
        }
        open = next;
    }
    out
}

/// Everything a decoder step needs to know about the current input.
pub struct StepContext<'a> {
    pub forward: &'a ForwardModel,
    pub vocab: &'a Vocab,
    /// Generator encoder output for the prompted input.
    pub memory: &'a Tensor,
    /// BOS followed by the previously selected sentences.
    pub decoder_prefix: &'a [usize],
    /// Longest sentence that still fits the positional limits.
    pub max_tokens: usize,
}

/// Proposes candidate sentences and their forward log-probabilities.
pub fn sample_candidates(
    ctx: &StepContext<'_>,
    config: &DecodeConfig,
    step: usize,
) -> Result<Vec<(Vec<usize>, Float)>> {
    ensure!(config.beam_size >= 1, "beam size must be at least 1");
    if ctx.max_tokens == 0 {
        return Ok(Vec::new());
    }
    let sentences = match config.source {
        CandidateSource::Enumerate => enumerate_sentences(ctx.vocab, ctx.max_tokens),
        CandidateSource::Greedy | CandidateSource::Nucleus => {
            let mut out = Vec::with_capacity(config.beam_size);
            for c in 0..config.beam_size {
                let mut rng = candidate_rng(config.seed, step, c);
                let mut prefix = ctx.decoder_prefix.to_vec();
                let mut sentence = Vec::new();
                while sentence.len() < ctx.max_tokens {
                    let lp = ctx.forward.next_token_log_probs(ctx.memory, &prefix)?;
                    let tok = match config.source {
                        CandidateSource::Greedy => greedy_token(&lp),
                        _ => sample_token(&lp, config, &mut rng),
                    };
                    sentence.push(tok);
                    prefix.push(tok);
                    if is_terminal(tok, ctx.vocab) {
                        break;
                    }
                }
                out.push(sentence);
            }
            out
        }
    };
    sentences
        .into_iter()
        .map(|s| {
            let lp = ctx
                .forward
                .continuation_log_prob(ctx.memory, ctx.decoder_prefix, &s)?;
            Ok((s, lp))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeStep {
    pub candidates: Vec<BeamCandidate>,
    pub selected: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Generation {
    /// Selected sentences, EOS removed.
    pub sentences: Vec<Vec<usize>>,
    pub steps: Vec<DecodeStep>,
}

impl Generation {
    pub fn tokens(&self) -> Vec<usize> {
        self.sentences.concat()
    }
}

/// Runs the sentence-level loop for one input. Without an inverse model every
/// candidate is ranked by its forward log-probability alone.
pub fn generate(
    input_ids: &[usize],
    forward: &ForwardModel,
    inverse: Option<&InverseModel>,
    vocab: &Vocab,
    config: &DecodeConfig,
) -> Result<Generation> {
    config.validate()?;
    ensure!(!input_ids.is_empty(), "cannot decode an empty input");
    let max_positions = forward.config().max_positions;
    let inverse_room = match inverse {
        Some(inv) => inv.model.config.max_positions.saturating_sub(2 * inv.k),
        None => usize::MAX,
    };
    let lambda = config.lambda as Float;
    let input_len = (input_ids.len() + 1) as Float;

    let memory = forward.memory(input_ids)?;
    let mut prefix = vec![BOS_ID];
    let mut out = Generation::default();

    for step in 0..config.max_sentences {
        let max_tokens = config
            .max_sentence_tokens
            .min(inverse_room)
            .min(max_positions.saturating_sub(prefix.len()));
        let ctx = StepContext {
            forward,
            vocab,
            memory: &memory,
            decoder_prefix: &prefix,
            max_tokens,
        };
        let sampled = sample_candidates(&ctx, config, step)?;
        let mut candidates = Vec::with_capacity(sampled.len());
        for (tokens, forward_logprob) in sampled {
            let content: Vec<usize> = tokens.iter().copied().filter(|&t| t != EOS_ID).collect();
            let inverse_logprob = match inverse {
                Some(inv) => inv.score_unchecked(input_ids, &content)?,
                None => 0.0,
            };
            let combined = if config.normalize_scores {
                combined_score(
                    forward_logprob / tokens.len() as Float,
                    inverse_logprob / input_len,
                    lambda,
                )
            } else {
                combined_score(forward_logprob, inverse_logprob, lambda)
            };
            candidates.push(BeamCandidate {
                tokens,
                forward_logprob,
                inverse_logprob,
                combined,
            });
        }
        let Some(selected) = select_best(&candidates) else {
            break;
        };
        let all_empty = candidates.iter().all(|c| c.content().is_empty());
        let chosen = candidates[selected].clone();
        out.steps.push(DecodeStep {
            candidates,
            selected,
        });
        if all_empty {
            break;
        }
        let content = chosen.content();
        if !content.is_empty() {
            prefix.extend_from_slice(&content);
            out.sentences.push(content);
        }
        if chosen.contains_eos() {
            break;
        }
    }
    Ok(out)
}
