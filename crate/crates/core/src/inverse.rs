//! Continuous inverse prompting: a second encoder–decoder reconstructs the
//! input from one output sentence wrapped in static trainable prompts.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::model::{HasParams, ModelConfig, Seq2SeqModel};
use crate::numerics::{Float, Graph, ParamId, ParamStore, Tensor, Var};
use crate::prompt::bracketed;

/// The 2k static prompt vectors shared by every example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InversePrompts {
    /// k×d
    pub prefix: ParamId,
    /// k×d
    pub suffix: ParamId,
}

/// Inverse model and its prompts; parameter-disjoint from the forward side.
#[derive(Clone, Debug)]
pub struct InverseModel {
    pub store: ParamStore,
    pub model: Seq2SeqModel,
    pub prompts: InversePrompts,
    pub k: usize,
    params: Vec<ParamId>,
}

impl InverseModel {
    /// Prompt slots start as copies of the embedding rows of `init_tokens`
    /// (cycled to fill k slots per side) plus N(0, init_std²) noise.
    pub fn new<R: Rng>(
        config: &ModelConfig,
        k: usize,
        init_tokens: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(k >= 1, "k must be at least 1");
        ensure!(
            !init_tokens.is_empty(),
            "need at least one token to initialize inverse prompts"
        );
        ensure!(
            init_tokens.iter().all(|&t| t < config.vocab_size),
            "inverse prompt init token outside the vocabulary"
        );
        let mut store = ParamStore::new();
        let model = Seq2SeqModel::new(&mut store, "inverse", config, rng)?;
        let d = config.d_model;
        let side = |store: &mut ParamStore, name: &str, rng: &mut R| {
            let e = store.get(model.embedding);
            let noise = Tensor::randn(&[k, d], config.init_std as Float, rng);
            let mut values = Vec::with_capacity(k * d);
            for slot in 0..k {
                let row = e.row(init_tokens[slot % init_tokens.len()]);
                values.extend(row.iter().zip(noise.row(slot)).map(|(a, b)| a + b));
            }
            store.add(name, Tensor::new(&[k, d], values).expect("k×d"), false)
        };
        let prefix = side(&mut store, "inverse_prompts.prefix", rng);
        let suffix = side(&mut store, "inverse_prompts.suffix", rng);
        let params = store.ids().collect();
        Ok(Self {
            store,
            model,
            prompts: InversePrompts { prefix, suffix },
            k,
            params,
        })
    }

    pub fn prefix(&self) -> &Tensor {
        self.store.get(self.prompts.prefix)
    }

    pub fn suffix(&self) -> &Tensor {
        self.store.get(self.prompts.suffix)
    }

    /// `[prefix ‖ E[sentence] ‖ suffix]`. An empty sentence leaves only the
    /// prompts.
    pub fn source(&self, g: &mut Graph<'_>, sentence: &[usize]) -> Result<Var> {
        let prefix = g.param(self.prompts.prefix);
        let suffix = g.param(self.prompts.suffix);
        if sentence.is_empty() {
            return g.concat_rows(&[prefix, suffix]);
        }
        let words = self.model.embed(g, sentence)?;
        g.concat_rows(&[prefix, words, suffix])
    }

    /// `-log Pr(X | prompts, sentence)` as a graph scalar.
    pub fn sentence_nll(
        &self,
        g: &mut Graph<'_>,
        input_ids: &[usize],
        sentence: &[usize],
    ) -> Result<Var> {
        ensure!(!input_ids.is_empty(), "input is empty");
        let source = self.source(g, sentence)?;
        let out = self.model.forward(g, source, &bracketed(input_ids))?;
        Ok(out.total_nll)
    }

    /// Total log-probability of reconstructing `input_ids` from `sentence`.
    pub fn inverse_score(&self, input_ids: &[usize], sentence: &[usize]) -> Result<Float> {
        ensure!(!sentence.is_empty(), "cannot score an empty sentence");
        self.score_unchecked(input_ids, sentence)
    }

    /// As [`Self::inverse_score`] but also accepts an empty sentence, which is
    /// scored against the bare prompts.
    pub fn score_unchecked(&self, input_ids: &[usize], sentence: &[usize]) -> Result<Float> {
        let mut g = Graph::new(&self.store);
        let nll = self.sentence_nll(&mut g, input_ids, sentence)?;
        Ok(-g.value(nll).values()[0])
    }

    /// `Σ_j -log Pr(X | prompts, y_j)`.
    pub fn inverse_loss(&self, input_ids: &[usize], sentences: &[Vec<usize>]) -> Result<Float> {
        ensure!(
            !sentences.is_empty(),
            "inverse loss needs at least one sentence"
        );
        let mut total = 0.0;
        for s in sentences {
            total -= self.inverse_score(input_ids, s)?;
        }
        Ok(total)
    }
}

impl HasParams for InverseModel {
    fn param_ids(&self) -> &[ParamId] {
        &self.params
    }
}
