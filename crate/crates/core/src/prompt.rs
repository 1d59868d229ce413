//! Contextualized prompts: k MASK slots on each side of the input are encoded
//! by the prompt generator, projected to a vocabulary distribution, and mapped
//! back into embedding space as a probability-weighted average of the
//! generator's word embeddings.

use rand::Rng;

use crate::data::{BOS_ID, EOS_ID, MASK_ID};
use crate::error::{ensure, Result};
use crate::model::{HasParams, MaskedEncoder, ModelConfig, Seq2SeqModel, Seq2SeqOutput};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

/// `[MASK]×k, input, [MASK]×k`.
pub fn build_masked_input(input_ids: &[usize], k: usize) -> Result<Vec<usize>> {
    ensure!(
        !input_ids.is_empty(),
        "cannot build prompts for an empty input"
    );
    ensure!(k >= 1, "k must be at least 1");
    let mut out = Vec::with_capacity(input_ids.len() + 2 * k);
    out.extend(std::iter::repeat_n(MASK_ID, k));
    out.extend_from_slice(input_ids);
    out.extend(std::iter::repeat_n(MASK_ID, k));
    Ok(out)
}

/// Row-wise `softmax(head · state)`; `head` is vocab×d.
pub fn vocab_distribution(g: &mut Graph<'_>, states: Var, head: Var) -> Result<Var> {
    let width = g.shape(states).1;
    let head_width = g.shape(head).1;
    ensure!(
        width == head_width,
        "prompt state width {width} does not match vocabulary head width {head_width}"
    );
    let head_t = g.transpose(head);
    let logits = g.matmul(states, head_t)?;
    Ok(g.softmax_rows(logits))
}

/// Row i of the result is `Σ_w distributions[i, w] · E[w]`.
pub fn semantic_map(g: &mut Graph<'_>, distributions: Var, embedding: Var) -> Result<Var> {
    let v = g.shape(distributions).1;
    let ev = g.shape(embedding).0;
    ensure!(
        v == ev,
        "distribution over {v} words cannot map through an embedding of {ev} rows"
    );
    g.matmul(distributions, embedding)
}

/// Graph handles for one input's prompts.
#[derive(Clone, Copy, Debug)]
pub struct PromptVars {
    /// 2k×d, prefix rows then suffix rows.
    pub vectors: Var,
    pub prefix: Var,
    pub suffix: Var,
    /// 2k×vocab.
    pub distributions: Var,
}

/// Concrete prompt values for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextualizedPrompts {
    /// k×d
    pub prefix: Tensor,
    /// k×d
    pub suffix: Tensor,
    /// 2k×vocab; row i produced prompt vector i.
    pub vocab_distributions: Tensor,
}

impl ContextualizedPrompts {
    pub fn k(&self) -> usize {
        self.prefix.rows()
    }

    /// Prompt vector `slot` in 0..2k.
    pub fn vector(&self, slot: usize) -> &[crate::numerics::Float] {
        let k = self.k();
        if slot < k {
            self.prefix.row(slot)
        } else {
            self.suffix.row(slot - k)
        }
    }
}

/// Prompt generator plus generator: the parameters optimized by the forward
/// objective.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    pub store: ParamStore,
    pub prompt_generator: MaskedEncoder,
    pub generator: Seq2SeqModel,
    pub k: usize,
    params: Vec<ParamId>,
}

impl ForwardModel {
    /// Both networks share `config`, so prompt vectors have the generator's
    /// width without any adapter.
    pub fn new<R: Rng>(config: &ModelConfig, k: usize, rng: &mut R) -> Result<Self> {
        ensure!(k >= 1, "k must be at least 1");
        ensure!(
            2 * k < config.max_positions,
            "2k = {} prompt slots do not fit in max_positions {}",
            2 * k,
            config.max_positions
        );
        let mut store = ParamStore::new();
        let prompt_generator = MaskedEncoder::new(&mut store, "prompt_generator", config, rng)?;
        let generator = Seq2SeqModel::new(&mut store, "generator", config, rng)?;
        let params = store.ids().collect();
        Ok(Self {
            store,
            prompt_generator,
            generator,
            k,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.generator.config
    }

    /// Records the full prompt construction for `input_ids` on `g`.
    pub fn prompt_vars(&self, g: &mut Graph<'_>, input_ids: &[usize]) -> Result<PromptVars> {
        let k = self.k;
        let masked = build_masked_input(input_ids, k)?;
        let states = self.prompt_generator.encode(g, &masked)?;
        let l = input_ids.len();
        let prefix_states = g.slice_rows(states, 0, k)?;
        let suffix_states = g.slice_rows(states, k + l, 2 * k + l)?;
        let slot_states = g.concat_rows(&[prefix_states, suffix_states])?;
        let head = g.param(self.prompt_generator.mlm_head);
        let distributions = vocab_distribution(g, slot_states, head)?;
        let e = g.param(self.generator.embedding);
        let vectors = semantic_map(g, distributions, e)?;
        let prefix = g.slice_rows(vectors, 0, k)?;
        let suffix = g.slice_rows(vectors, k, 2 * k)?;
        Ok(PromptVars {
            vectors,
            prefix,
            suffix,
            distributions,
        })
    }

    pub fn prompts(&self, input_ids: &[usize]) -> Result<ContextualizedPrompts> {
        let mut g = Graph::new(&self.store);
        let p = self.prompt_vars(&mut g, input_ids)?;
        Ok(ContextualizedPrompts {
            prefix: g.value(p.prefix).clone(),
            suffix: g.value(p.suffix).clone(),
            vocab_distributions: g.value(p.distributions).clone(),
        })
    }

    /// The generator's encoder input `[prefix ‖ E[input] ‖ suffix]`.
    pub fn source(&self, g: &mut Graph<'_>, input_ids: &[usize]) -> Result<Var> {
        let p = self.prompt_vars(g, input_ids)?;
        assemble_generator_input(g, p.prefix, p.suffix, input_ids, &self.generator)
    }

    /// Teacher-forced generator pass; `target_ids` is BOS … EOS.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        input_ids: &[usize],
        target_ids: &[usize],
    ) -> Result<Seq2SeqOutput> {
        let source = self.source(g, input_ids)?;
        self.generator.forward(g, source, target_ids)
    }

    /// The same pass without prompts: plain `E[input]` as the source.
    pub fn forward_without_prompts(
        &self,
        g: &mut Graph<'_>,
        input_ids: &[usize],
        target_ids: &[usize],
    ) -> Result<Seq2SeqOutput> {
        let source = self.generator.embed(g, input_ids)?;
        self.generator.forward(g, source, target_ids)
    }

    /// Generator encoder output for `input_ids`, for reuse across decoding steps.
    pub fn memory(&self, input_ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let source = self.source(&mut g, input_ids)?;
        let memory = self.generator.encode(&mut g, source)?;
        Ok(g.value(memory).clone())
    }

    /// Next-token log-probabilities after `decoder_ids`, given an encoder output.
    pub fn next_token_log_probs(
        &self,
        memory: &Tensor,
        decoder_ids: &[usize],
    ) -> Result<Vec<crate::numerics::Float>> {
        let mut g = Graph::new(&self.store);
        let mem = g.constant(memory.clone());
        let logits = self.generator.decode_logits(&mut g, mem, decoder_ids)?;
        let last = g.shape(logits).0 - 1;
        let row = g.slice_rows(logits, last, last + 1)?;
        let lp = g.log_softmax_rows(row);
        Ok(g.value(lp).values().to_vec())
    }

    /// Summed log-probability of `tokens` continuing `decoder_prefix`, scored
    /// by one teacher-forced pass.
    pub fn continuation_log_prob(
        &self,
        memory: &Tensor,
        decoder_prefix: &[usize],
        tokens: &[usize],
    ) -> Result<crate::numerics::Float> {
        ensure!(
            !decoder_prefix.is_empty(),
            "decoder prefix must start with BOS"
        );
        ensure!(!tokens.is_empty(), "nothing to score");
        let mut g = Graph::new(&self.store);
        let mem = g.constant(memory.clone());
        let mut target = decoder_prefix.to_vec();
        target.extend_from_slice(tokens);
        let out = self.generator.forward_from_memory(&mut g, mem, &target)?;
        let gold = g.value(out.gold_log_probs).values();
        Ok(gold[decoder_prefix.len() - 1..].iter().sum())
    }
}

impl HasParams for ForwardModel {
    fn param_ids(&self) -> &[ParamId] {
        &self.params
    }
}

/// `[prefix ‖ E[input_ids] ‖ suffix]`, using the generator's embedding.
pub fn assemble_generator_input(
    g: &mut Graph<'_>,
    prefix: Var,
    suffix: Var,
    input_ids: &[usize],
    generator: &Seq2SeqModel,
) -> Result<Var> {
    let d = generator.config.d_model;
    ensure!(
        g.shape(prefix).1 == d && g.shape(suffix).1 == d,
        "prompt width {} does not match generator width {d}",
        g.shape(prefix).1
    );
    let words = generator.embed(g, input_ids)?;
    g.concat_rows(&[prefix, words, suffix])
}

/// BOS, ids, EOS.
pub(crate) fn bracketed(ids: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.push(BOS_ID);
    out.extend_from_slice(ids);
    out.push(EOS_ID);
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::Float;

    pub(crate) fn tiny_config(vocab: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            vocab_size: vocab,
            max_positions: 24,
            feedforward_width: 16,
            init_std: 0.3,
        }
    }

    fn model(seed: u64) -> ForwardModel {
        ForwardModel::new(&tiny_config(12), 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn masked_input_layout() {
        let m = MASK_ID;
        assert_eq!(
            build_masked_input(&[7, 8, 9], 2).unwrap(),
            [m, m, 7, 8, 9, m, m]
        );
        assert_eq!(build_masked_input(&[7], 1).unwrap(), [m, 7, m]);
        let long = build_masked_input(&[5; 10], 150).unwrap();
        assert_eq!(long.len(), 310);
        assert!(build_masked_input(&[], 2).is_err());
    }

    #[test]
    fn vocab_distribution_rows_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::detached();
        let s = g.constant(Tensor::randn(&[4, 3], 1.0, &mut rng));
        let h = g.constant(Tensor::randn(&[7, 3], 1.0, &mut rng));
        let d = vocab_distribution(&mut g, s, h).unwrap();
        let dv = g.value(d);
        for r in 0..4 {
            assert!((dv.row(r).iter().sum::<Float>() - 1.0).abs() < 1e-5);
        }
        let bad = g.constant(Tensor::zeros(&[7, 4]));
        assert!(vocab_distribution(&mut g, s, bad).is_err());
    }

    #[test]
    fn vocab_distribution_saturates_to_one_hot() {
        let mut g = Graph::detached();
        let s = g.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let h = g.constant(Tensor::matrix(3, 2, vec![0.0, 0.0, 50.0, 0.0, 0.0, 0.0]).unwrap());
        let d = vocab_distribution(&mut g, s, h).unwrap();
        let dv = g.value(d).values();
        assert!((dv[1] - 1.0).abs() < 1e-6 && dv[0] < 1e-6 && dv[2] < 1e-6);
    }

    #[test]
    fn vocab_distribution_matches_softmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = Tensor::randn(&[1, 4], 1.0, &mut rng);
        let head = Tensor::randn(&[7, 4], 1.0, &mut rng);
        let mut g = Graph::detached();
        let s = g.constant(state.clone());
        let h = g.constant(head.clone());
        let d = vocab_distribution(&mut g, s, h).unwrap();
        let logits: Vec<f64> = (0..7)
            .map(|w| {
                (0..4)
                    .map(|j| head.at(w, j) as f64 * state.at(0, j) as f64)
                    .sum()
            })
            .collect();
        let z: f64 = logits.iter().map(|x| x.exp()).sum();
        for (w, logit) in logits.iter().enumerate() {
            let expected = logit.exp() / z;
            assert!((g.value(d).values()[w] as f64 - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn semantic_map_identity_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let mut g = Graph::detached();
        let ev = g.constant(e.clone());
        let mut dist = vec![0.0; 10];
        dist[3] = 1.0;
        dist[5..].fill(0.2);
        let dv = g.constant(Tensor::matrix(2, 5, dist).unwrap());
        let p = semantic_map(&mut g, dv, ev).unwrap();
        assert_eq!(g.value(p).row(0), e.row(3));
        for j in 0..4 {
            let mean = (0..5).map(|w| e.at(w, j)).sum::<Float>() / 5.0;
            assert!((g.value(p).at(1, j) - mean).abs() < 1e-6);
        }
        let bad = g.constant(Tensor::zeros(&[4, 4]));
        assert!(semantic_map(&mut g, dv, bad).is_err());
    }

    #[test]
    fn semantic_map_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let raw = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let dist = crate::numerics::ops::softmax(&raw, 1).unwrap();
        let mut g = Graph::detached();
        let ev = g.constant(e.clone());
        let dv = g.constant(dist.clone());
        let p = semantic_map(&mut g, dv, ev).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let mut acc = 0.0f64;
                for w in 0..5 {
                    acc += dist.at(i, w) as f64 * e.at(w, j) as f64;
                }
                assert!((g.value(p).at(i, j) as f64 - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn prompts_count_and_determinism() {
        let m = model(5);
        let p = m.prompts(&[5, 6, 7]).unwrap();
        assert_eq!(p.prefix.shape(), &[2, 8]);
        assert_eq!(p.suffix.shape(), &[2, 8]);
        assert_eq!(p.vocab_distributions.shape(), &[4, 12]);
        assert_eq!(p, m.prompts(&[5, 6, 7]).unwrap());
    }

    #[test]
    fn prompts_lie_in_embedding_convex_hull() {
        let m = model(6);
        let p = m.prompts(&[5, 9, 7, 11]).unwrap();
        let e = m.store.get(m.generator.embedding);
        for slot in 0..4 {
            let dist = p.vocab_distributions.row(slot);
            assert!(dist.iter().all(|&x| x >= 0.0));
            assert!((dist.iter().sum::<Float>() - 1.0).abs() < 1e-5);
            for j in 0..8 {
                let recon: Float = (0..12).map(|w| dist[w] * e.at(w, j)).sum();
                assert!((recon - p.vector(slot)[j]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn differing_inputs_give_differing_prompts() {
        for seed in 0..20 {
            let m = model(100 + seed);
            let a = m.prompts(&[5, 6, 7]).unwrap();
            let b = m.prompts(&[5, 8, 7]).unwrap();
            let diff = a
                .prefix
                .max_abs_diff(&b.prefix)
                .max(a.suffix.max_abs_diff(&b.suffix));
            assert!(diff > 1e-6, "seed {seed}: prompts identical");
        }
    }

    #[test]
    fn assembled_input_places_words_between_prompts() {
        let m = model(7);
        let mut g = Graph::new(&m.store);
        let src = m.source(&mut g, &[9, 10, 11]).unwrap();
        assert_eq!(g.shape(src), (7, 8));
        let e = m.store.get(m.generator.embedding);
        assert_eq!(g.value(src).row(2), e.row(9));
        assert_eq!(g.value(src).row(4), e.row(11));
    }

    #[test]
    fn assembly_rejects_width_mismatch() {
        let m = model(8);
        let mut g = Graph::new(&m.store);
        let bad = g.constant(Tensor::zeros(&[2, 4]));
        assert!(assemble_generator_input(&mut g, bad, bad, &[5], &m.generator).is_err());
    }

    #[test]
    fn assembly_feeds_generator_for_random_configs() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let heads = [1, 2, 4][rng.random_range(0..3)];
            let cfg = ModelConfig {
                d_model: 4 * heads * rng.random_range(1..3),
                n_layers: rng.random_range(1..3),
                n_heads: heads,
                vocab_size: rng.random_range(8..20),
                max_positions: 32,
                feedforward_width: rng.random_range(4..20),
                init_std: 0.1,
            };
            let k = rng.random_range(1..5);
            let m = ForwardModel::new(&cfg, k, &mut rng).unwrap();
            let l = rng.random_range(1..8);
            let input: Vec<usize> = (0..l)
                .map(|_| rng.random_range(5..cfg.vocab_size))
                .collect();
            let target = bracketed(&[5, 6]);
            let mut g = Graph::new(&m.store);
            let out = m.forward(&mut g, &input, &target).unwrap();
            assert!(g.value(out.loss).values()[0].is_finite());
        }
    }

    #[test]
    fn forward_loss_reaches_prompt_generator() {
        let m = model(10);
        let mut g = Graph::new(&m.store);
        let out = m.forward(&mut g, &[5, 6, 7], &bracketed(&[8, 9])).unwrap();
        let grads = g.backward(out.loss).unwrap();
        let head = grads.param(m.prompt_generator.mlm_head).unwrap();
        assert!(head.iter().any(|&x| x != 0.0));
        let pg_emb = grads.param(m.prompt_generator.token_embedding).unwrap();
        assert!(pg_emb.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn no_prompt_mode_is_plain_seq2seq() {
        let m = model(11);
        let target = bracketed(&[8, 9, 10]);
        let mut g = Graph::new(&m.store);
        let a = m.forward_without_prompts(&mut g, &[5, 6], &target).unwrap();
        let mut g2 = Graph::new(&m.store);
        let src = m.generator.embed(&mut g2, &[5, 6]).unwrap();
        let b = m.generator.forward(&mut g2, src, &target).unwrap();
        assert_eq!(g.value(a.loss).values(), g2.value(b.loss).values());
    }

    #[test]
    fn continuation_scoring_matches_incremental_log_probs() {
        let m = model(12);
        let memory = m.memory(&[5, 6]).unwrap();
        let prefix = [BOS_ID, 7];
        let tokens = [8, 9];
        let scored = m.continuation_log_prob(&memory, &prefix, &tokens).unwrap();
        let first = m.next_token_log_probs(&memory, &prefix).unwrap()[8];
        let second = m.next_token_log_probs(&memory, &[BOS_ID, 7, 8]).unwrap()[9];
        assert!((scored - (first + second)).abs() < 1e-5);
    }
}
