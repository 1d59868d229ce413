//! Automatic metrics, the nearest-word prompt probe and the k sweep.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data::{Example, Vocab};
use crate::decoding::{generate, DecodeConfig};
use crate::error::{ensure, Result};
use crate::model::ModelConfig;
use crate::numerics::Tensor;
use crate::prompt::ContextualizedPrompts;
use crate::training::{build_models, TrainConfig, Trainer};

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-n in [0, 100], uniform weights, no smoothing.
pub fn bleu_n<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<f64> {
    ensure!(
        hypotheses.len() == references.len(),
        "{} hypotheses but {} references",
        hypotheses.len(),
        references.len()
    );
    ensure!(n >= 1, "BLEU order must be at least 1");
    let hyp_len: usize = hypotheses.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_precision = 0.0;
    for order in 1..=n {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (h, r) in hypotheses.iter().zip(references) {
            let reference = ngram_counts(r, order);
            for (gram, count) in ngram_counts(h, order) {
                matched += count.min(reference.get(gram).copied().unwrap_or(0));
                total += count;
            }
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_precision += (matched as f64 / total as f64).ln();
    }
    let brevity = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0);
    Ok(100.0 * (log_precision / n as f64 + brevity).exp())
}

/// Unique n-grams over total n-grams across the whole corpus, in [0, 100].
pub fn distinct_n<T: Eq + Hash>(hypotheses: &[Vec<T>], n: usize) -> f64 {
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for h in hypotheses {
        if n == 0 || h.len() < n {
            continue;
        }
        for w in h.windows(n) {
            unique.insert(w);
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    100.0 * unique.len() as f64 / total as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub distinct1: f64,
    pub distinct4: f64,
}

impl MetricReport {
    pub fn compute<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<Self> {
        Ok(Self {
            bleu1: bleu_n(hypotheses, references, 1)?,
            bleu2: bleu_n(hypotheses, references, 2)?,
            distinct1: distinct_n(hypotheses, 1),
            distinct4: distinct_n(hypotheses, 4),
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain numeric record")
    }

    pub fn in_range(&self) -> bool {
        [self.bleu1, self.bleu2, self.distinct1, self.distinct4]
            .iter()
            .all(|v| (0.0..=100.0).contains(v))
    }
}

/// Aligned table with columns `label | B-1 | B-2 | D-1 | D-4`.
pub fn metric_table(label: &str, rows: &[(String, MetricReport)]) -> String {
    let width = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain([label.len()])
        .max()
        .unwrap_or(0);
    let mut out = format!(
        "{label:<width$} | {:>6} | {:>6} | {:>6} | {:>6}\n",
        "B-1", "B-2", "D-1", "D-4"
    );
    for (l, m) in rows {
        let _ = writeln!(
            out,
            "{l:<width$} | {:>6.2} | {:>6.2} | {:>6.2} | {:>6.2}",
            m.bleu1, m.bleu2, m.distinct1, m.distinct4
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeMatch {
    pub id: usize,
    pub token: String,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSlot {
    /// 0..2k; the first k are the left prompts.
    pub slot: usize,
    /// Empty when the prompt vector has zero norm.
    pub matches: Vec<ProbeMatch>,
    pub similarity_undefined: bool,
}

/// Nearest vocabulary words, by cosine similarity against the rows of
/// `embedding`, for each of the 2k prompt vectors. Ties go to the lower id;
/// zero-norm embedding rows score 0.
pub fn prompt_probe(
    prompts: &ContextualizedPrompts,
    embedding: &Tensor,
    vocab: &Vocab,
    top_t: usize,
) -> Result<Vec<ProbeSlot>> {
    ensure!(top_t >= 1, "top_t must be at least 1");
    ensure!(
        embedding.rows() == vocab.len(),
        "embedding has {} rows but the vocabulary has {} tokens",
        embedding.rows(),
        vocab.len()
    );
    ensure!(
        embedding.cols() == prompts.prefix.cols(),
        "embedding width {} does not match prompt width {}",
        embedding.cols(),
        prompts.prefix.cols()
    );
    let norms: Vec<f64> = (0..embedding.rows())
        .map(|i| norm(embedding.row(i)))
        .collect();
    let mut out = Vec::with_capacity(2 * prompts.k());
    for slot in 0..2 * prompts.k() {
        let v = prompts.vector(slot);
        let v_norm = norm(v);
        if v_norm == 0.0 {
            out.push(ProbeSlot {
                slot,
                matches: Vec::new(),
                similarity_undefined: true,
            });
            continue;
        }
        let mut scored: Vec<(usize, f64)> = (0..embedding.rows())
            .map(|i| {
                let sim = if norms[i] == 0.0 {
                    0.0
                } else {
                    dot(v, embedding.row(i)) / (v_norm * norms[i])
                };
                (i, sim)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let matches = scored
            .into_iter()
            .take(top_t)
            .map(|(id, similarity)| ProbeMatch {
                id,
                token: vocab.token(id).to_string(),
                similarity,
            })
            .collect();
        out.push(ProbeSlot {
            slot,
            matches,
            similarity_undefined: false,
        });
    }
    Ok(out)
}

fn dot<F: Into<f64> + Copy>(a: &[F], b: &[F]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.into() * y.into()).sum()
}

fn norm<F: Into<f64> + Copy>(a: &[F]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

/// Trains one forward model per k (no inverse objective) and decodes every
/// example with λ = 0. Metrics compare generations against the gold outputs.
pub fn sensitivity_sweep(
    k_values: &[usize],
    examples: &[Example],
    vocab: &Vocab,
    model: &ModelConfig,
    train: &TrainConfig,
    decode: &DecodeConfig,
) -> Result<Vec<SweepRow>> {
    ensure!(!k_values.is_empty(), "sweep needs at least one k");
    ensure!(!examples.is_empty(), "sweep needs at least one example");
    let train = TrainConfig {
        train_inverse: false,
        ..train.clone()
    };
    let decode = DecodeConfig {
        lambda: 0.0,
        ..decode.clone()
    };
    let references: Vec<Vec<usize>> = examples.iter().map(Example::output_ids).collect();
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let (forward, inverse) = build_models(model, k, vocab, train.seed)?;
        let mut trainer = Trainer::new(forward, inverse, train.clone())?;
        trainer.fit(examples, &[], vocab, |_| {})?;
        let mut hypotheses = Vec::with_capacity(examples.len());
        for ex in examples {
            hypotheses
                .push(generate(&ex.input_ids, &trainer.forward, None, vocab, &decode)?.tokens());
        }
        rows.push(SweepRow {
            k,
            metrics: MetricReport::compute(&hypotheses, &references)?,
        });
    }
    Ok(rows)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let labelled: Vec<(String, MetricReport)> = rows
        .iter()
        .map(|r| (format!("k={}", r.k), r.metrics))
        .collect();
    metric_table("#Prompt", &labelled)
}
